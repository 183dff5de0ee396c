#include "snaking/segment.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>

namespace snaking {

void gauss_legendre_01(int m, VectorXd& nodes, VectorXd& weights) {
    // Newton iteration on Legendre P_m over (-1,1), then map to (0,1)
    nodes.resize(m);
    weights.resize(m);
    for (int i = 0; i < m; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (m + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= m; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = m * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes(m - 1 - i) = 0.5 * (1.0 + x);
        weights(m - 1 - i) = 1.0 / ((1.0 - x * x) * dp * dp);
    }
}

VectorXd CollocationBasis::lagrange_at(double x) const {
    const int n = m + 1;
    VectorXd out = VectorXd::Zero(n);
    for (int k = 0; k < n; ++k) {
        if (std::abs(x - nodes(k)) < 1e-14) {
            out(k) = 1.0;
            return out;
        }
    }
    double denom = 0.0;
    for (int k = 0; k < n; ++k) {
        double t = bary(k) / (x - nodes(k));
        out(k) = t;
        denom += t;
    }
    out /= denom;
    return out;
}

VectorXd CollocationBasis::lagrange_deriv_at(double x) const {
    const int n = m + 1;
    for (int k = 0; k < n; ++k) {
        if (std::abs(x - nodes(k)) < 1e-14) return Dfull.row(k).transpose();
    }
    // off the nodes: l_k'(x) = l_k(x) * sum_{j != k} 1/(x - x_j)
    VectorXd l = lagrange_at(x);
    VectorXd out(n);
    for (int k = 0; k < n; ++k) {
        double s = 0.0;
        for (int j = 0; j < n; ++j)
            if (j != k) s += 1.0 / (x - nodes(j));
        out(k) = l(k) * s;
    }
    return out;
}

const CollocationBasis& collocation_basis(int m) {
    static std::map<int, CollocationBasis> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(m);
    if (it != cache.end()) return it->second;
    if (m < 2 || m > 10) throw std::invalid_argument("collocation degree must be in [2,10]");

    CollocationBasis B;
    B.m = m;
    gauss_legendre_01(m, B.c, B.w_quad);
    B.nodes.resize(m + 1);
    B.nodes(0) = 0.0;
    B.nodes.tail(m) = B.c;

    const int n = m + 1;
    B.bary.resize(n);
    for (int k = 0; k < n; ++k) {
        double w = 1.0;
        for (int j = 0; j < n; ++j)
            if (j != k) w *= (B.nodes(k) - B.nodes(j));
        B.bary(k) = 1.0 / w;
    }
    B.Dfull.resize(n, n);
    for (int i = 0; i < n; ++i) {
        double diag = 0.0;
        for (int k = 0; k < n; ++k) {
            if (i == k) continue;
            B.Dfull(i, k) = (B.bary(k) / B.bary(i)) / (B.nodes(i) - B.nodes(k));
            diag -= B.Dfull(i, k);
        }
        B.Dfull(i, i) = diag;
    }
    B.D = B.Dfull.bottomRows(m);
    B.E.resize(n);
    B.E = B.lagrange_at(1.0);
    return cache.emplace(m, std::move(B)).first->second;
}

// OrbitSegment ----------------------------------------------------------------

double OrbitSegment::tau_stage(int j, int i) const {
    const auto& B = collocation_basis(degree);
    return mesh[j] + B.c(i) * (mesh[j + 1] - mesh[j]);
}

namespace {
int find_interval(const std::vector<double>& mesh, double tau) {
    if (tau <= mesh.front()) return 0;
    const int N = static_cast<int>(mesh.size()) - 1;
    if (tau >= mesh.back()) return N - 1;
    int lo = 0, hi = N;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        (mesh[mid] <= tau ? lo : hi) = mid;
    }
    return lo;
}
}  // namespace

VectorXd OrbitSegment::eval(double tau) const {
    if (tau >= mesh.back()) return values.col(col_break(n_intervals()));
    const auto& B = collocation_basis(degree);
    int j = find_interval(mesh, tau);
    double h = mesh[j + 1] - mesh[j];
    double x = (tau - mesh[j]) / h;
    if (std::abs(x) < 1e-14) return values.col(col_break(j));
    for (int i = 0; i < degree; ++i)
        if (std::abs(x - B.c(i)) < 1e-14) return values.col(col_stage(j, i));
    VectorXd l = B.lagrange_at(x);
    // anchored at the left breakpoint: constants reproduce bit-exactly
    VectorXd u0 = values.col(col_break(j));
    VectorXd out = u0;
    for (int i = 0; i < degree; ++i) out += l(i + 1) * (values.col(col_stage(j, i)) - u0);
    return out;
}

VectorXd OrbitSegment::eval_derivative(double tau) const {
    const auto& B = collocation_basis(degree);
    int j = find_interval(mesh, tau);
    double h = mesh[j + 1] - mesh[j];
    double x = (tau - mesh[j]) / h;
    if (tau >= mesh.back()) {
        j = n_intervals() - 1;
        h = mesh[j + 1] - mesh[j];
        x = 1.0;
    }
    VectorXd dl = B.lagrange_deriv_at(x);
    VectorXd out = VectorXd::Zero(dimension());
    out += dl(0) * values.col(col_break(j));
    for (int i = 0; i < degree; ++i) out += dl(i + 1) * values.col(col_stage(j, i));
    return out / h;
}

OrbitSegment OrbitSegment::from_function(const std::vector<double>& mesh, int degree,
                                         const std::function<VectorXd(double)>& u,
                                         double time_scale) {
    OrbitSegment s;
    s.mesh = mesh;
    s.degree = degree;
    s.time_scale = time_scale;
    const int N = s.n_intervals();
    const auto& B = collocation_basis(degree);
    VectorXd u0 = u(mesh[0]);
    s.values.resize(u0.size(), N * (degree + 1) + 1);
    for (int j = 0; j < N; ++j) {
        s.values.col(s.col_break(j)) = u(mesh[j]);
        double h = mesh[j + 1] - mesh[j];
        for (int i = 0; i < degree; ++i) s.values.col(s.col_stage(j, i)) = u(mesh[j] + B.c(i) * h);
    }
    s.values.col(s.col_break(N)) = u(mesh[N]);
    return s;
}

OrbitSegment OrbitSegment::constant(int n_intervals, int degree, const VectorXd& u0,
                                    double time_scale) {
    return from_function(uniform_mesh(n_intervals), degree, [&](double) { return u0; },
                         time_scale);
}

std::vector<double> uniform_mesh(int n_intervals) {
    std::vector<double> mesh(n_intervals + 1);
    for (int j = 0; j <= n_intervals; ++j) mesh[j] = static_cast<double>(j) / n_intervals;
    mesh.back() = 1.0;
    return mesh;
}

OrbitSegment interpolate_to_mesh(const OrbitSegment& seg, const std::vector<double>& new_mesh) {
    return OrbitSegment::from_function(new_mesh, seg.degree,
                                       [&](double tau) { return seg.eval(tau); },
                                       seg.time_scale);
}

OrbitSegment remesh(const OrbitSegment& seg, int n_intervals) {
    if (n_intervals < 4) throw std::invalid_argument("remesh needs at least 4 intervals");
    // monitor: (m+1)-st derivative magnitude proxy from the highest Lagrange
    // coefficient per interval, floored so the distribution stays proper
    const int N = seg.n_intervals();
    std::vector<double> monitor(N);
    double floor_val = 0.0;
    for (int j = 0; j < N; ++j) {
        double h = seg.mesh[j + 1] - seg.mesh[j];
        // max second difference of values across the interval as a curvature proxy
        double curv = 0.0;
        for (int i = 0; i + 1 < seg.degree; ++i) {
            VectorXd d2 = seg.values.col(seg.col_stage(j, i + 1)) -
                          2.0 * seg.values.col(seg.col_stage(j, i)) +
                          seg.values.col(seg.col_break(j));
            curv = std::max(curv, d2.norm());
        }
        monitor[j] = std::pow(curv / (h * h) + 1e-12, 1.0 / (seg.degree + 1));
        floor_val = std::max(floor_val, monitor[j]);
    }
    for (double& v : monitor) v = std::max(v, 1e-3 * floor_val);

    // cumulative distribution of monitor * h, then invert at uniform quantiles
    std::vector<double> cum(N + 1, 0.0);
    for (int j = 0; j < N; ++j)
        cum[j + 1] = cum[j] + monitor[j] * (seg.mesh[j + 1] - seg.mesh[j]);
    std::vector<double> mesh(n_intervals + 1);
    mesh[0] = 0.0;
    mesh[n_intervals] = 1.0;
    for (int k = 1; k < n_intervals; ++k) {
        double target = cum[N] * k / n_intervals;
        int j = 0;
        while (j < N && cum[j + 1] < target) ++j;
        double frac = (target - cum[j]) / std::max(cum[j + 1] - cum[j], 1e-300);
        mesh[k] = seg.mesh[j] + frac * (seg.mesh[j + 1] - seg.mesh[j]);
    }
    return interpolate_to_mesh(seg, mesh);
}

}  // namespace snaking
