#include "ddn/density_toy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ddn::density {

double Box::scale() const {
    double s = 0.0;
    for (int i = 0; i < dim(); ++i) s = std::max(s, hi[static_cast<std::size_t>(i)] - lo[static_cast<std::size_t>(i)]);
    return s;
}

namespace {

double normal_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

struct Component2D {
    double mx, my, sigma, weight;
};

DensityTarget isotropic_mixture(std::string name, std::vector<Component2D> comps, Box box) {
    DensityTarget t;
    t.name = std::move(name);
    t.box = std::move(box);
    std::vector<double> weights;
    for (const auto& c : comps) weights.push_back(c.weight);
    auto pick = std::make_shared<std::discrete_distribution<int>>(weights.begin(), weights.end());
    t.sample = [comps, pick](std::mt19937_64& rng, std::span<double> out) {
        const auto& c = comps[static_cast<std::size_t>((*pick)(rng))];
        std::normal_distribution<double> n(0.0, 1.0);
        out[0] = c.mx + c.sigma * n(rng);
        out[1] = c.my + c.sigma * n(rng);
    };
    t.pdf = [comps](std::span<const double> x) {
        double acc = 0.0;
        for (const auto& c : comps) acc += c.weight * normal_pdf(x[0], c.mx, c.sigma) * normal_pdf(x[1], c.my, c.sigma);
        return acc;
    };
    return t;
}

Box unit_square() { return {{0.0, 0.0}, {1.0, 1.0}}; }

}  // namespace

DensityTarget bimodal_1d(double heavy, double sigma) {
    DensityTarget t;
    t.name = "bimodal";
    t.box = {{-1.0 - 5.0 * sigma}, {1.0 + 5.0 * sigma}};
    t.sample = [heavy, sigma](std::mt19937_64& rng, std::span<double> out) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> n(0.0, sigma);
        const double mode = u(rng) < heavy ? -1.0 : 1.0;
        out[0] = mode + n(rng);
    };
    t.pdf = [heavy, sigma](std::span<const double> x) {
        return heavy * normal_pdf(x[0], -1.0, sigma) + (1.0 - heavy) * normal_pdf(x[0], 1.0, sigma);
    };
    return t;
}

DensityTarget bell_1d() {
    DensityTarget t;
    t.name = "bell";
    t.box = {{-4.0}, {4.0}};
    t.sample = [](std::mt19937_64& rng, std::span<double> out) {
        std::normal_distribution<double> n(0.0, 1.0);
        do {
            out[0] = n(rng);
        } while (std::abs(out[0]) > 4.0);
    };
    t.pdf = [](std::span<const double> x) { return normal_pdf(x[0], 0.0, 1.0); };
    return t;
}

DensityTarget uniform_1d(double lo, double hi) {
    DensityTarget t;
    t.name = "uniform";
    t.box = {{lo}, {hi}};
    t.sample = [lo, hi](std::mt19937_64& rng, std::span<double> out) {
        out[0] = std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    t.pdf = [](std::span<const double>) { return 1.0; };
    return t;
}

DensityTarget point_mass(std::vector<double> at, Box box) {
    if (at.size() != box.lo.size()) throw std::invalid_argument("point_mass: dimension mismatch");
    DensityTarget t;
    t.name = "point";
    t.box = std::move(box);
    t.sample = [at](std::mt19937_64&, std::span<double> out) { std::copy(at.begin(), at.end(), out.begin()); };
    return t;
}

DensityTarget gmm_2d() {
    // Component widths are small enough that the support covers roughly as
    // many 100x100 bins as a K=1000 cloud has nodes.
    return isotropic_mixture("gmm",
                             {{0.25, 0.25, 0.021, 0.30},
                              {0.70, 0.30, 0.015, 0.20},
                              {0.50, 0.72, 0.027, 0.25},
                              {0.20, 0.70, 0.012, 0.10},
                              {0.80, 0.80, 0.018, 0.15}},
                             unit_square());
}

DensityTarget ring_2d() {
    constexpr double radius = 0.3, width = 0.02;
    DensityTarget t;
    t.name = "ring";
    t.box = unit_square();
    t.sample = [](std::mt19937_64& rng, std::span<double> out) {
        std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
        std::normal_distribution<double> r(radius, width);
        const double a = angle(rng), rr = r(rng);
        out[0] = 0.5 + rr * std::cos(a);
        out[1] = 0.5 + rr * std::sin(a);
    };
    t.pdf = [](std::span<const double> x) {
        const double r = std::hypot(x[0] - 0.5, x[1] - 0.5);
        return r < 1e-9 ? 0.0 : normal_pdf(r, radius, width) / r;
    };
    return t;
}

DensityTarget two_moons_2d() {
    constexpr double noise = 0.015;
    // Upper moon (cos t, sin t), lower moon (1 - cos t, 0.5 - sin t), t in
    // [0, pi], mapped from [-1, 2] x [-0.75, 1.25] into the unit square.
    auto curve = [](int moon, double t, double& x, double& y) {
        const double cx = moon == 0 ? std::cos(t) : 1.0 - std::cos(t);
        const double cy = moon == 0 ? std::sin(t) : 0.5 - std::sin(t);
        x = (cx + 1.0) / 3.0;
        y = (cy + 0.75) / 2.0 * (2.0 / 3.0) + 1.0 / 6.0;
    };
    DensityTarget t;
    t.name = "two-moons";
    t.box = unit_square();
    t.sample = [curve](std::mt19937_64& rng, std::span<double> out) {
        std::uniform_real_distribution<double> u(0.0, std::numbers::pi);
        std::normal_distribution<double> n(0.0, noise);
        const int moon = std::uniform_int_distribution<int>(0, 1)(rng);
        curve(moon, u(rng), out[0], out[1]);
        out[0] += n(rng);
        out[1] += n(rng);
    };
    t.pdf = [curve](std::span<const double> x) {
        constexpr int steps = 400;
        double acc = 0.0;
        for (int moon = 0; moon < 2; ++moon) {
            for (int i = 0; i < steps; ++i) {
                double cx, cy;
                curve(moon, (i + 0.5) * std::numbers::pi / steps, cx, cy);
                acc += normal_pdf(x[0], cx, noise) * normal_pdf(x[1], cy, noise);
            }
        }
        return acc;
    };
    return t;
}

DensityTarget image_target(const std::vector<float>& gray, int height, int width) {
    if (static_cast<int>(gray.size()) != height * width || height < 1 || width < 1) {
        throw std::invalid_argument("image_target: pixel count does not match size");
    }
    std::vector<double> mass(gray.begin(), gray.end());
    for (double& m : mass) {
        if (!(m >= 0.0)) throw std::invalid_argument("image_target: negative or NaN density");
    }
    if (std::all_of(mass.begin(), mass.end(), [](double m) { return m == 0.0; })) {
        throw std::invalid_argument("image_target: empty support");
    }
    auto pick = std::make_shared<std::discrete_distribution<int>>(mass.begin(), mass.end());
    DensityTarget t;
    t.name = "image";
    t.box = unit_square();
    t.sample = [pick, height, width](std::mt19937_64& rng, std::span<double> out) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int idx = (*pick)(rng);
        const int row = idx / width, col = idx % width;
        out[0] = (col + u(rng)) / width;
        out[1] = 1.0 - (row + u(rng)) / height;
    };
    t.pdf = [mass, height, width](std::span<const double> x) {
        const int col = std::clamp(static_cast<int>(x[0] * width), 0, width - 1);
        const int row = std::clamp(static_cast<int>((1.0 - x[1]) * height), 0, height - 1);
        return mass[static_cast<std::size_t>(row * width + col)];
    };
    return t;
}

DensityTarget builtin_target(const std::string& name) {
    if (name == "gmm") return gmm_2d();
    if (name == "ring") return ring_2d();
    if (name == "two-moons") return two_moons_2d();
    if (name == "bimodal") return bimodal_1d();
    if (name == "bell") return bell_1d();
    if (name == "uniform") return uniform_1d(0.0, 1.0);
    throw std::invalid_argument(fmt::format("unknown builtin target '{}'", name));
}

std::string mode_name(FitMode m) { return m == FitMode::split_prune ? "split-prune" : "grad-only"; }

FitMode parse_mode(const std::string& s) {
    if (s == "sp" || s == "split-prune") return FitMode::split_prune;
    if (s == "grad" || s == "grad-only") return FitMode::grad_only;
    throw std::invalid_argument(fmt::format("unknown mode '{}' (expected sp or grad)", s));
}

template <typename Scalar>
int nearest_node(const RowMatrix<Scalar>& points, std::span<const Scalar> x) {
    const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> row(x.data(), static_cast<Index>(x.size()));
    Index best = 0;
    (points.rowwise() - row).rowwise().squaredNorm().minCoeff(&best);
    return static_cast<int>(best);
}

template <typename Scalar>
NodeCloud<Scalar> fit(const DensityTarget& target, const FitOptions& o) {
    const int d = target.dim();
    const int K = o.K;
    if (K < 2) throw std::invalid_argument("fit: need K >= 2");
    const std::int64_t iters = o.iters > 0 ? o.iters : 10 * static_cast<std::int64_t>(K);
    std::mt19937_64 rng(o.seed);

    NodeCloud<Scalar> c;
    c.points.resize(K, d);
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < d; ++j) {
            std::uniform_real_distribution<double> u(target.box.lo[static_cast<std::size_t>(j)],
                                                     target.box.hi[static_cast<std::size_t>(j)]);
            c.points(k, j) = static_cast<Scalar>(u(rng));
        }
    }
    c.m = RowMatrix<Scalar>::Zero(K, d);
    c.v = RowMatrix<Scalar>::Zero(K, d);
    c.t.assign(static_cast<std::size_t>(K), 0);
    c.split_prune = SplitPruneState(K);

    std::normal_distribution<double> jitter(0.0, o.jitter * target.box.scale());
    std::vector<double> xd(static_cast<std::size_t>(d));
    std::vector<Scalar> x(static_cast<std::size_t>(d));
    const SlotCloneFn clone = [&](int src, int dst) {
        for (int j = 0; j < d; ++j) c.points(dst, j) = c.points(src, j) + static_cast<Scalar>(jitter(rng));
        c.m.row(dst) = c.m.row(src);
        c.v.row(dst) = c.v.row(src);
        c.t[static_cast<std::size_t>(dst)] = c.t[static_cast<std::size_t>(src)];
    };
    for (std::int64_t it = 0; it < iters; ++it) {
        target.sample(rng, xd);
        std::transform(xd.begin(), xd.end(), x.begin(), [](double v) { return static_cast<Scalar>(v); });
        const int k = nearest_node<Scalar>(c.points, x);
        const AdamBias bias = AdamBias::at(++c.t[static_cast<std::size_t>(k)], o.adam);
        for (int j = 0; j < d; ++j) {
            const Scalar g = Scalar(2) * (c.points(k, j) - x[static_cast<std::size_t>(j)]) / Scalar(d);
            adam_update(c.points(k, j), g, c.m(k, j), c.v(k, j), bias, o.adam);
        }
        if (o.mode == FitMode::split_prune) {
            record_match(c.split_prune, k);
            if (check_and_apply(c.split_prune, clone, it)) ++c.events;
        }
        if (o.on_snapshot && o.snapshot_every > 0 && (it + 1) % o.snapshot_every == 0) {
            o.on_snapshot(it + 1, c.points.template cast<double>());
        }
    }
    return c;
}

template int nearest_node<float>(const RowMatrix<float>&, std::span<const float>);
template int nearest_node<double>(const RowMatrix<double>&, std::span<const double>);
template NodeCloud<float> fit<float>(const DensityTarget&, const FitOptions&);
template NodeCloud<double> fit<double>(const DensityTarget&, const FitOptions&);

namespace {

// Bin index of a point, or -1 outside the box.
Index bin_of(std::span<const double> x, const Box& box, int per_axis) {
    Index idx = 0;
    for (int j = 0; j < box.dim(); ++j) {
        const double lo = box.lo[static_cast<std::size_t>(j)], hi = box.hi[static_cast<std::size_t>(j)];
        const double u = (x[static_cast<std::size_t>(j)] - lo) / (hi - lo);
        if (!(u >= 0.0 && u <= 1.0)) return -1;
        const Index i = std::min<Index>(static_cast<Index>(u * per_axis), per_axis - 1);
        idx = idx * per_axis + i;
    }
    return idx;
}

Index bin_total(int dim, int per_axis) {
    Index n = 1;
    for (int j = 0; j < dim; ++j) n *= per_axis;
    return n;
}

}  // namespace

std::vector<double> binned_target(const DensityTarget& target, const Bins& bins, std::uint64_t seed) {
    const int d = target.dim();
    const Index total = bin_total(d, bins.per_axis);
    std::vector<double> p(static_cast<std::size_t>(total), 0.0);
    if (target.pdf) {
        std::vector<double> centre(static_cast<std::size_t>(d));
        for (Index b = 0; b < total; ++b) {
            Index rest = b;
            for (int j = d - 1; j >= 0; --j) {
                const Index i = rest % bins.per_axis;
                rest /= bins.per_axis;
                const double lo = target.box.lo[static_cast<std::size_t>(j)], hi = target.box.hi[static_cast<std::size_t>(j)];
                centre[static_cast<std::size_t>(j)] = lo + (static_cast<double>(i) + 0.5) * (hi - lo) / bins.per_axis;
            }
            p[static_cast<std::size_t>(b)] = target.pdf(centre);
        }
    } else {
        std::mt19937_64 rng(seed);
        std::vector<double> x(static_cast<std::size_t>(d));
        for (int i = 0; i < 200000; ++i) {
            target.sample(rng, x);
            if (const Index b = bin_of(x, target.box, bins.per_axis); b >= 0) p[static_cast<std::size_t>(b)] += 1.0;
        }
    }
    double sum = 0.0;
    for (double v : p) sum += v;
    if (!(sum > 0.0)) throw std::invalid_argument(fmt::format("target '{}' has no mass inside the bins", target.name));
    for (double& v : p) v /= sum;
    return p;
}

std::vector<double> binned_points(const RowMatrix<double>& points, const Box& box, const Bins& bins) {
    if (points.cols() != box.dim()) throw std::invalid_argument("binned_points: dimension mismatch");
    std::vector<double> q(static_cast<std::size_t>(bin_total(box.dim(), bins.per_axis)), 0.0);
    const double mass = 1.0 / static_cast<double>(points.rows());
    std::vector<double> x(static_cast<std::size_t>(box.dim()));
    for (Index r = 0; r < points.rows(); ++r) {
        for (int j = 0; j < box.dim(); ++j) x[static_cast<std::size_t>(j)] = points(r, j);
        if (const Index b = bin_of(x, box, bins.per_axis); b >= 0) q[static_cast<std::size_t>(b)] += mass;
    }
    return q;
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double eps) {
    if (p.size() != q.size() || p.empty()) throw std::invalid_argument("kl_divergence: size mismatch or empty support");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] / (q[i] + eps));
    }
    return acc;
}

nlohmann::json KLReport::to_json() const { return {{"d_kl", d_kl}, {"bins", bins}, {"mode", mode}}; }

KLReport kl_report(const RowMatrix<double>& points, const DensityTarget& target, const Bins& bins,
                   const std::string& mode) {
    const auto p = binned_target(target, bins);
    const auto q = binned_points(points, target.box, bins);
    return {kl_divergence(p, q), bins.per_axis, mode};
}

RowMatrix<double> real_samples(const DensityTarget& target, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RowMatrix<double> out(count, target.dim());
    std::vector<double> x(static_cast<std::size_t>(target.dim()));
    for (int i = 0; i < count; ++i) {
        target.sample(rng, x);
        for (int j = 0; j < target.dim(); ++j) out(i, j) = x[static_cast<std::size_t>(j)];
    }
    return out;
}

double fraction_nearer(const RowMatrix<double>& points, double a, double b) {
    if (points.rows() == 0) return 0.0;
    Index n = 0;
    for (Index r = 0; r < points.rows(); ++r) n += std::abs(points(r, 0) - a) < std::abs(points(r, 0) - b);
    return static_cast<double>(n) / static_cast<double>(points.rows());
}

std::vector<double> midpoints(std::vector<double> nodes) {
    std::sort(nodes.begin(), nodes.end());
    std::vector<double> out;
    for (std::size_t i = 1; i < nodes.size(); ++i) out.push_back(0.5 * (nodes[i - 1] + nodes[i]));
    return out;
}

namespace {

constexpr int kGrid = 8000;

// Target density normalized over the box, evaluated on a midpoint grid.
std::vector<double> grid_density(const DensityTarget& t, double& dx) {
    const double lo = t.box.lo[0], hi = t.box.hi[0];
    dx = (hi - lo) / kGrid;
    std::vector<double> p(kGrid);
    double sum = 0.0;
    for (int i = 0; i < kGrid; ++i) {
        const double x = lo + (i + 0.5) * dx;
        p[static_cast<std::size_t>(i)] = t.pdf(std::span<const double>(&x, 1));
        sum += p[static_cast<std::size_t>(i)] * dx;
    }
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace

Snapshot1D describe_1d(const DensityTarget& target, std::vector<double> nodes, const std::string& stage) {
    if (target.dim() != 1 || !target.pdf) throw std::invalid_argument("describe_1d: needs a 1-D target with a pdf");
    if (nodes.empty()) throw std::invalid_argument("describe_1d: no nodes");
    std::sort(nodes.begin(), nodes.end());
    Snapshot1D s;
    s.stage = stage;
    s.boundaries = midpoints(nodes);
    s.nodes = std::move(nodes);
    const std::size_t K = s.nodes.size();
    s.q = 1.0 / static_cast<double>(K);

    std::vector<double> edges{target.box.lo[0]};
    edges.insert(edges.end(), s.boundaries.begin(), s.boundaries.end());
    edges.push_back(target.box.hi[0]);

    double dx = 0.0;
    const auto p = grid_density(target, dx);
    s.p.assign(K, 0.0);
    double kl = 0.0;
    std::size_t k = 0;
    for (int i = 0; i < kGrid; ++i) {
        const double x = target.box.lo[0] + (i + 0.5) * dx;
        while (k + 1 < K && x >= edges[k + 1]) ++k;
        const double pi = p[static_cast<std::size_t>(i)];
        s.p[k] += pi * dx;
        const double width = edges[k + 1] - edges[k];
        if (pi > 0.0) kl += pi * dx * std::log(pi / (s.q / std::max(width, 1e-300)));
    }
    s.kl = kl;
    return s;
}

std::vector<double> split_highest(const DensityTarget& target, std::vector<double> nodes) {
    const auto s = describe_1d(target, nodes, "");
    const auto k = static_cast<std::size_t>(std::max_element(s.p.begin(), s.p.end()) - s.p.begin());
    const double left = k == 0 ? target.box.lo[0] : s.boundaries[k - 1];
    const double right = k + 1 == s.nodes.size() ? target.box.hi[0] : s.boundaries[k];
    const double quarter = 0.25 * (right - left);
    std::vector<double> out = s.nodes;
    out[k] = s.nodes[k] - quarter;
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(k) + 1, s.nodes[k] + quarter);
    return out;
}

std::vector<double> prune_lowest(const DensityTarget& target, std::vector<double> nodes) {
    const auto s = describe_1d(target, nodes, "");
    const auto k = std::min_element(s.p.begin(), s.p.end()) - s.p.begin();
    std::vector<double> out = s.nodes;
    out.erase(out.begin() + k);
    return out;
}

std::vector<Snapshot1D> illustrate_1d(const DensityTarget& target, int k_small, int k_large, std::uint64_t seed) {
    std::vector<Snapshot1D> out;
    auto run = [&](int K, bool steps) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(target.box.lo[0], target.box.hi[0]);
        std::vector<double> nodes(static_cast<std::size_t>(K));
        for (double& x : nodes) x = u(rng);
        const std::string tag = fmt::format("K={} ", K);
        out.push_back(describe_1d(target, nodes, tag + "init"));
        if (steps) {
            nodes = split_highest(target, nodes);
            out.push_back(describe_1d(target, nodes, tag + "split"));
            nodes = prune_lowest(target, nodes);
            out.push_back(describe_1d(target, nodes, tag + "prune"));
        }
        FitOptions o;
        o.K = K;
        o.iters = 2000 * static_cast<std::int64_t>(K);
        o.seed = seed;
        const auto cloud = fit<double>(target, o);
        std::vector<double> final_nodes(cloud.points.data(), cloud.points.data() + cloud.points.size());
        out.push_back(describe_1d(target, final_nodes, tag + "final"));
    };
    run(k_small, true);
    run(k_large, false);
    return out;
}

}  // namespace ddn::density
