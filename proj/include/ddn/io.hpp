#pragma once

#include "ddn/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddn::io {

/// Malformed input; `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Whole file, transparently inflated when gzip-compressed.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

/// Unsigned-byte IDX payload with the given magic.
IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic);

/// Images scaled to [0,1] as [N,1,H,W] with labels attached.
Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);
/// `split` is "train" or "t10k"; finds the raw or .gz files in `dir`.
Dataset load_mnist_dir(const std::filesystem::path& dir, const std::string& split);

/// PNG as float [C,H,W] in [0,1]; C is 1 for gray input, 3 otherwise unless
/// `channels` forces 1 or 3.
Array read_png(const std::filesystem::path& path, int channels = 0);
/// Clamps to [0,1]; C must be 1 or 3.
std::vector<std::uint8_t> encode_png(const Array& image);
void write_png(const std::filesystem::path& path, const Array& image);

/// Every *.png in `dir`, lexicographic by file name, as one dataset.
Dataset load_image_folder(const std::filesystem::path& dir, int channels = 0);

/// Tiles [N,C,H,W] into a [C, rows*(H+pad)+pad, cols*(W+pad)+pad] sheet.
Array make_grid(const Array& images, int cols, int pad = 2, float background = 0.5f);

}  // namespace ddn::io
