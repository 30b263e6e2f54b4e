#include "ddn/io.hpp"

#include <fmt/format.h>
#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ddn::io {

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(fmt::format("{} (byte offset {})", what, offset)), offset_(offset) {}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 20);
    for (;;) {
        const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) {
            int err = 0;
            const std::string msg = gzerror(f, &err);
            gzclose(f);
            throw ParseError(fmt::format("{}: {}", path.string(), msg), out.size());
        }
        if (n == 0) break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    gzclose(f);
    return out;
}

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic) {
    if (bytes.size() < 4) throw ParseError("IDX: file too short for the magic number", bytes.size());
    const std::uint32_t magic = be32(bytes, 0);
    if (magic != expected_magic) {
        throw ParseError(fmt::format("IDX: bad magic 0x{:08x}, expected 0x{:08x}", magic, expected_magic), 0);
    }
    const std::size_t rank = magic & 0xff;
    const std::size_t header = 4 + 4 * rank;
    if (bytes.size() < header) {
        throw ParseError(fmt::format("IDX: header needs {} bytes for {} dimensions", header, rank), bytes.size());
    }
    IdxArray out;
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        out.dims.push_back(be32(bytes, 4 + 4 * i));
        count *= out.dims.back();
    }
    if (bytes.size() - header < count) {
        throw ParseError(fmt::format("IDX: truncated data, {} bytes expected after the header, {} present", count,
                                     bytes.size() - header),
                         bytes.size());
    }
    if (bytes.size() - header > count) {
        throw ParseError(fmt::format("IDX: {} trailing bytes after the data", bytes.size() - header - count),
                         header + count);
    }
    out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return out;
}

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = parse_idx(read_file(images), kIdxImagesMagic);
    const auto lab = parse_idx(read_file(labels), kIdxLabelsMagic);
    if (img.dims.size() != 3) throw ParseError("IDX: images must be rank 3", 3);
    if (lab.dims.size() != 1) throw ParseError("IDX: labels must be rank 1", 3);
    if (img.dims[0] != lab.dims[0]) {
        throw ParseError(fmt::format("IDX: {} images but {} labels", img.dims[0], lab.dims[0]), 4);
    }
    const Index n = img.dims[0], h = img.dims[1], w = img.dims[2];
    Dataset d;
    d.images = Array({n, 1, h, w});
    for (std::size_t i = 0; i < img.data.size(); ++i) d.images[static_cast<Index>(i)] = img.data[i] / 255.0f;
    d.labels.assign(lab.data.begin(), lab.data.end());
    return d;
}

Dataset load_mnist_dir(const std::filesystem::path& dir, const std::string& split) {
    auto find = [&](const std::string& stem) {
        for (const auto& name : {stem, stem + ".gz"}) {
            if (std::filesystem::exists(dir / name)) return dir / name;
        }
        throw std::runtime_error(fmt::format("{} not found in {} (raw or .gz)", stem, dir.string()));
    };
    return load_mnist(find(split + "-images-idx3-ubyte"), find(split + "-labels-idx1-ubyte"));
}

namespace {

Array from_png_image(png_image& image, std::vector<std::uint8_t>& buffer, int channels) {
    const int c = channels != 0 ? channels : ((image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1);
    if (c != 1 && c != 3) throw std::invalid_argument(fmt::format("PNG: unsupported channel count {}", c));
    image.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    buffer.resize(PNG_IMAGE_SIZE(image));
    return Array({c, static_cast<Index>(image.height), static_cast<Index>(image.width)});
}

void to_planar(const std::vector<std::uint8_t>& buffer, Array& out) {
    const Index c = out.dim(0), hw = out.dim(1) * out.dim(2);
    for (Index i = 0; i < hw; ++i)
        for (Index ch = 0; ch < c; ++ch) out[ch * hw + i] = buffer[static_cast<std::size_t>(i * c + ch)] / 255.0f;
}

}  // namespace

Array read_png(const std::filesystem::path& path, int channels) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw std::runtime_error(fmt::format("{}: {}", path.string(), image.message));
    }
    std::vector<std::uint8_t> buffer;
    Array out = from_png_image(image, buffer, channels);
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error(fmt::format("{}: {}", path.string(), image.message));
    }
    to_planar(buffer, out);
    return out;
}

std::vector<std::uint8_t> encode_png(const Array& img) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw_shape_error("encode_png", {img.shape()}, "expected [1|3,H,W]");
    }
    const Index c = img.dim(0), hw = img.dim(1) * img.dim(2);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(c * hw));
    for (Index i = 0; i < hw; ++i)
        for (Index ch = 0; ch < c; ++ch) {
            const float v = std::clamp(img[ch * hw + i], 0.0f, 1.0f);
            pixels[static_cast<std::size_t>(i * c + ch)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.dim(2));
    image.height = static_cast<png_uint_32>(img.dim(1));
    image.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
        throw std::runtime_error(fmt::format("PNG encode: {}", image.message));
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
        throw std::runtime_error(fmt::format("PNG encode: {}", image.message));
    }
    out.resize(size);
    return out;
}

void write_png(const std::filesystem::path& path, const Array& image) {
    const auto bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
    const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (n != bytes.size()) throw std::runtime_error(fmt::format("short write to {}", path.string()));
}

Dataset load_image_folder(const std::filesystem::path& dir, int channels) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
    if (files.empty()) throw std::runtime_error(fmt::format("no PNG files in {}", dir.string()));
    std::vector<Array> images;
    for (const auto& f : files) {
        images.push_back(read_png(f, channels));
        if (channels == 0) channels = static_cast<int>(images.back().dim(0));
        if (images.back().shape() != images.front().shape()) {
            throw std::runtime_error(fmt::format("{}: size {} differs from {}", f.string(),
                                                 shape_string(images.back().shape()), shape_string(images.front().shape())));
        }
    }
    Dataset d;
    d.images = stack0<float>(images);
    return d;
}

Array make_grid(const Array& images, int cols, int pad, float background) {
    if (images.rank() != 4) throw_shape_error("make_grid", {images.shape()}, "expected [N,C,H,W]");
    const Index n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    cols = std::max(1, std::min<int>(cols, static_cast<int>(std::max<Index>(n, 1))));
    const Index rows = (n + cols - 1) / cols;
    const Index H = rows * (h + pad) + pad, W = cols * (w + pad) + pad;
    Array out({c, H, W}, background);
    for (Index i = 0; i < n; ++i) {
        const Index y0 = pad + (i / cols) * (h + pad), x0 = pad + (i % cols) * (w + pad);
        for (Index ch = 0; ch < c; ++ch)
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < w; ++x) out[(ch * H + y0 + y) * W + x0 + x] = images[((i * c + ch) * h + y) * w + x];
    }
    return out;
}

}  // namespace ddn::io
