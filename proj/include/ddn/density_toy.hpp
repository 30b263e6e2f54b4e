#pragma once

#include "ddn/split_prune.hpp"
#include "ddn/tensor/adam.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ddn::density {

/// Axis-aligned support box, one (lo, hi) pair per dimension.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;
    int dim() const { return static_cast<int>(lo.size()); }
    double scale() const;
};

/// Target distribution q(x) in one or two dimensions.
struct DensityTarget {
    std::string name;
    Box box;
    /// Draws one point into `out` (size dim).
    std::function<void(std::mt19937_64&, std::span<double>)> sample;
    /// Unnormalized density; when empty, binning falls back to Monte Carlo.
    std::function<double(std::span<const double>)> pdf;
    int dim() const { return box.dim(); }
};

/// Two 1-D Gaussians at -1 and +1 with masses heavy / 1-heavy.
DensityTarget bimodal_1d(double heavy = 0.75, double sigma = 0.1);
/// Standard normal on [-4, 4].
DensityTarget bell_1d();
DensityTarget uniform_1d(double lo, double hi);
DensityTarget point_mass(std::vector<double> at, Box box);
/// Five-component mixture in the unit square.
DensityTarget gmm_2d();
DensityTarget ring_2d();
DensityTarget two_moons_2d();
/// Density proportional to a grayscale grid [H,W] stretched over the unit
/// square; row 0 is the top edge (y = 1).
DensityTarget image_target(const std::vector<float>& gray, int height, int width);
/// "gmm", "ring", "two-moons", "bimodal", "bell", "uniform".
DensityTarget builtin_target(const std::string& name);

enum class FitMode { split_prune, grad_only };
std::string mode_name(FitMode m);
FitMode parse_mode(const std::string& s);

/// K direct-parameter points with per-node Adam state.
template <typename Scalar>
struct NodeCloud {
    RowMatrix<Scalar> points;  // K x d
    RowMatrix<Scalar> m;
    RowMatrix<Scalar> v;
    std::vector<std::int64_t> t;
    SplitPruneState split_prune;
    std::int64_t events = 0;

    int size() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }
};

struct FitOptions {
    int K = 100;
    std::int64_t iters = 0;  // 0 means 10 * K
    FitMode mode = FitMode::split_prune;
    std::uint64_t seed = 0;
    AdamConfig adam{.lr = 0.01f};
    double jitter = 1e-6;  // times the box scale, applied to a fresh clone
    /// Called every `snapshot_every` iterations when set.
    std::int64_t snapshot_every = 0;
    std::function<void(std::int64_t, const RowMatrix<double>&)> on_snapshot;
};

/// Nodes start uniform over the box; each iteration draws x ~ q, moves the
/// nearest node by one Adam step on its squared distance and, in split-prune
/// mode, updates counters and applies at most one split/prune pair.
template <typename Scalar>
NodeCloud<Scalar> fit(const DensityTarget& target, const FitOptions& options);

template <typename Scalar>
int nearest_node(const RowMatrix<Scalar>& points, std::span<const Scalar> x);

struct Bins {
    int per_axis = 100;
};

/// Normalized target mass per bin (row-major over dims).
std::vector<double> binned_target(const DensityTarget& target, const Bins& bins, std::uint64_t seed = 0);
/// Histogram of points with mass 1/count each; points outside the box drop out.
std::vector<double> binned_points(const RowMatrix<double>& points, const Box& box, const Bins& bins);

/// sum_P>0 P log(P / (Q + eps)).
double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = 1e-12);

struct KLReport {
    double d_kl = 0.0;
    int bins = 100;
    std::string mode;
    nlohmann::json to_json() const;
};

KLReport kl_report(const RowMatrix<double>& points, const DensityTarget& target, const Bins& bins,
                   const std::string& mode);

/// `count` independent draws from the target.
RowMatrix<double> real_samples(const DensityTarget& target, int count, std::uint64_t seed);

/// Fraction of 1-D nodes closer to `a` than to `b`.
double fraction_nearer(const RowMatrix<double>& points, double a, double b);

struct Snapshot1D {
    std::string stage;
    std::vector<double> nodes;       // sorted
    std::vector<double> boundaries;  // midpoints between neighbours
    std::vector<double> p;           // target mass per interval
    double q = 0.0;                  // 1/K
    double kl = 0.0;                 // target vs piecewise-constant Q density
};

/// Midpoints between consecutive sorted nodes.
std::vector<double> midpoints(std::vector<double> nodes);
/// Interval masses and the continuous KL of the target against the density
/// that spreads 1/K uniformly over every node's interval.
Snapshot1D describe_1d(const DensityTarget& target, std::vector<double> nodes, const std::string& stage);
/// Replaces the highest-mass node by twins a quarter interval either side.
std::vector<double> split_highest(const DensityTarget& target, std::vector<double> nodes);
/// Removes the lowest-mass node.
std::vector<double> prune_lowest(const DensityTarget& target, std::vector<double> nodes);

/// Stages init / split / prune / final for K nodes, then init / final at
/// `k_large`. Final stages come from fit() in split-prune mode.
std::vector<Snapshot1D> illustrate_1d(const DensityTarget& target, int k_small = 5, int k_large = 15,
                                      std::uint64_t seed = 0);

}  // namespace ddn::density
