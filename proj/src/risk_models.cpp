#include "driftlab/risk_models.hpp"

#include "driftlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace driftlab {

namespace {

constexpr double kNewtonTolerance = 1e-12;
constexpr int kNewtonBudget = 100;
// |w| ≤ 2 bounds the analysis region of the double-well family: |12w² − 4| ≤ 44.
constexpr double kDoubleWellLipschitz = 44.0;

Matrix random_symmetric_unit(Eigen::Index m, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix s(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i <= j; ++i) {
            s(i, j) = normal(rng);
            s(j, i) = s(i, j);
        }
    }
    const double norm = spectral_norm(s);
    return norm > 0.0 ? Matrix(s / norm) : s;
}

Matrix rotated_spectrum(const std::vector<double>& eigenvalues, Rng& rng) {
    const auto m = static_cast<Eigen::Index>(eigenvalues.size());
    const Matrix u = random_orthogonal(m, rng);
    Vector diag(m);
    for (Eigen::Index i = 0; i < m; ++i) diag(i) = eigenvalues[static_cast<std::size_t>(i)];
    return symmetrize(u * diag.asDiagonal() * u.transpose());
}

// Double-well aggregate derivative pieces, with c = mean tilt (zero up to rounding).
double dw_slope(double w, double c) { return 4.0 * w * (w * w - 1.0) + c; }
double dw_curvature(double w) { return 12.0 * w * w - 4.0; }

double newton_root(double seed, double c) {
    double w = seed;
    double residual = std::abs(dw_slope(w, c));
    for (int step = 0; step < kNewtonBudget; ++step) {
        if (residual <= kNewtonTolerance) return w;
        const double curvature = dw_curvature(w);
        double delta = curvature != 0.0 ? dw_slope(w, c) / curvature : dw_slope(w, c);
        double next = w - delta;
        // damp by 0.5 while |J'| fails to decrease
        for (int halving = 0; halving < 60 && std::abs(dw_slope(next, c)) >= residual; ++halving) {
            delta *= 0.5;
            next = w - delta;
        }
        w = next;
        residual = std::abs(dw_slope(w, c));
    }
    if (residual <= kNewtonTolerance) return w;
    throw ConvergenceError("minimizer_summary: Newton refinement did not converge within 100 steps");
}

}  // namespace

std::string to_string(RiskFamily family) {
    return family == RiskFamily::quadratic ? "quadratic" : "double_well";
}

std::string to_string(NoiseMode mode) { return mode == NoiseMode::dataset ? "dataset" : "additive"; }

void NetworkRiskModel::check_agent(int k) const {
    if (k < 0 || k >= agents_) throw ValidationError("k", "agent index out of range");
}

double NetworkRiskModel::agent_risk(int k, const Vector& w) const {
    check_agent(k);
    if (w.size() != dim_) throw ValidationError("w", "dimension mismatch");
    const auto ku = static_cast<std::size_t>(k);
    if (family_ == RiskFamily::double_well) {
        const double x = w(0);
        return (x * x - 1.0) * (x * x - 1.0) + (tilts_[ku] + sample_mean_[ku]) * x;
    }
    if (noise_mode_ == NoiseMode::dataset) {
        const auto& data = datasets_[ku];
        const Vector residual = data.features * w - data.labels;
        return 0.5 * residual.squaredNorm() / static_cast<double>(data.size());
    }
    const Vector e = w - minimizers_[ku];
    return 0.5 * e.dot(hessians_[ku] * e);
}

Vector NetworkRiskModel::agent_gradient(int k, const Vector& w) const {
    check_agent(k);
    if (w.size() != dim_) throw ValidationError("w", "dimension mismatch");
    const auto ku = static_cast<std::size_t>(k);
    if (family_ == RiskFamily::double_well) {
        Vector g(1);
        g(0) = dw_slope(w(0), tilts_[ku] + sample_mean_[ku]);
        return g;
    }
    if (noise_mode_ == NoiseMode::dataset) {
        const auto& data = datasets_[ku];
        return data.features.transpose() * (data.features * w - data.labels) / static_cast<double>(data.size());
    }
    return hessians_[ku] * (w - minimizers_[ku]);
}

Matrix NetworkRiskModel::agent_hessian(int k, const Vector& w) const {
    check_agent(k);
    if (family_ == RiskFamily::double_well) return Matrix::Constant(1, 1, dw_curvature(w(0)));
    return hessians_[static_cast<std::size_t>(k)];
}

Vector NetworkRiskModel::sample_gradient(int k, const Vector& w, Eigen::Index i) const {
    check_agent(k);
    const auto& data = datasets_[static_cast<std::size_t>(k)];
    if (i < 0 || i >= data.size()) throw ValidationError("i", "sample index out of range");
    if (family_ == RiskFamily::double_well) {
        Vector g(1);
        g(0) = dw_slope(w(0), tilts_[static_cast<std::size_t>(k)] + data.features(i, 0));
        return g;
    }
    const Vector gamma = data.features.row(i).transpose();
    return gamma * (gamma.dot(w) - data.labels(i));
}

Matrix NetworkRiskModel::noise_covariance(int k, const Vector& w) const {
    check_agent(k);
    if (noise_mode_ == NoiseMode::additive) return noise_cov_[static_cast<std::size_t>(k)];
    const auto& data = datasets_[static_cast<std::size_t>(k)];
    const Vector mean = agent_gradient(k, w);
    Matrix cov = Matrix::Zero(dim_, dim_);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const Vector s = sample_gradient(k, w, i) - mean;
        cov.noalias() += s * s.transpose();
    }
    return symmetrize(cov / static_cast<double>(data.size()));
}

Vector NetworkRiskModel::additive_noise(int k, int batch, Rng& rng) const {
    const Vector z = standard_normal_vector(dim_, rng);
    return noise_factor_[static_cast<std::size_t>(k)] * z / std::sqrt(static_cast<double>(batch));
}

NetworkRiskModel make_quadratic_network(const QuadraticSpec& spec) {
    if (spec.agents < 1) throw ValidationError("model.K", "K must be at least 1");
    if (spec.dim < 1) throw ValidationError("model.M", "M must be at least 1");
    if (spec.noise_mode == NoiseMode::dataset && spec.dataset_size < spec.dim) {
        throw ValidationError("model.dataset_size", "dataset mode needs dataset_size >= M");
    }
    if (spec.noise_scale < 0.0) throw ValidationError("model.noise_scale", "noise_scale must be non-negative");

    const auto k_count = static_cast<std::size_t>(spec.agents);
    const Eigen::Index m = spec.dim;
    NetworkRiskModel model;
    model.family_ = RiskFamily::quadratic;
    model.noise_mode_ = spec.noise_mode;
    model.agents_ = spec.agents;
    model.dim_ = spec.dim;

    // Hessians
    if (spec.hessians) {
        if (spec.hessians->size() != k_count) throw ValidationError("model.hessians", "need one Hessian per agent");
        model.hessians_ = *spec.hessians;
    } else {
        Rng rng = make_rng(spec.seed, 1);
        std::vector<double> spectrum = spec.hessian_eigenvalues;
        if (spectrum.empty()) {
            for (Eigen::Index i = 0; i < m; ++i) {
                spectrum.push_back(m == 1 ? 1.0 : 0.5 + static_cast<double>(i) / static_cast<double>(m - 1));
            }
        }
        if (static_cast<Eigen::Index>(spectrum.size()) != m) {
            throw ValidationError("model.hessian_eigenvalues", "need exactly M eigenvalues");
        }
        const Matrix shared = rotated_spectrum(spectrum, rng);
        model.hessians_.assign(k_count, shared);
        if (spec.hessian_mode == HessianMode::heterogeneous) {
            for (auto& h : model.hessians_) h = symmetrize(h + spec.hessian_jitter * random_symmetric_unit(m, rng));
        }
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        const Matrix& h = model.hessians_[k];
        if (h.rows() != m || h.cols() != m) throw ValidationError("model.hessians", "Hessian must be M×M");
        if (!is_positive_definite(h)) {
            throw ValidationError("model.hessians", "Hessian of agent " + std::to_string(k) + " is not positive definite");
        }
    }

    // Local minimizers
    if (spec.minimizers) {
        if (spec.minimizers->size() != k_count) throw ValidationError("model.minimizers", "need one minimizer per agent");
        model.minimizers_ = *spec.minimizers;
        for (const auto& w : model.minimizers_) {
            if (w.size() != m) throw ValidationError("model.minimizers", "minimizer must have length M");
        }
    } else {
        Rng rng = make_rng(spec.seed, 2);
        for (std::size_t k = 0; k < k_count; ++k) {
            model.minimizers_.push_back(spec.minimizer_spread * standard_normal_vector(m, rng));
        }
    }

    if (spec.noise_mode == NoiseMode::additive) {
        if (spec.noise_covariances) {
            if (spec.noise_covariances->size() != k_count) {
                throw ValidationError("model.noise_covariances", "need one covariance per agent");
            }
            model.noise_cov_ = *spec.noise_covariances;
        } else {
            Rng rng = make_rng(spec.seed, 3);
            std::uniform_real_distribution<double> unit(0.5, 1.5);
            const double var = spec.noise_scale * spec.noise_scale;
            for (std::size_t k = 0; k < k_count; ++k) {
                std::vector<double> spectrum;
                for (Eigen::Index i = 0; i < m; ++i) spectrum.push_back(var * unit(rng));
                model.noise_cov_.push_back(rotated_spectrum(spectrum, rng));
            }
        }
        for (const auto& r : model.noise_cov_) {
            if (r.rows() != m || r.cols() != m) throw ValidationError("model.noise_covariances", "covariance must be M×M");
            model.noise_factor_.push_back(psd_sqrt(r));
        }
        double lip = 0.0;
        for (const auto& h : model.hessians_) lip = std::max(lip, spectral_norm(h));
        model.lipschitz_ = lip;
    } else {
        Rng rng = make_rng(spec.seed, 4);
        std::normal_distribution<double> normal(0.0, 1.0);
        const Eigen::Index n = spec.dataset_size;
        double lip = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            Matrix raw(n, m);
            for (Eigen::Index j = 0; j < m; ++j) {
                for (Eigen::Index i = 0; i < n; ++i) raw(i, j) = normal(rng);
            }
            const Matrix second_moment = symmetrize(raw.transpose() * raw / static_cast<double>(n));
            if (!is_positive_definite(second_moment)) {
                throw ValidationError("model.dataset_size", "raw features are rank deficient");
            }
            // map so that (1/N)ΓᵀΓ equals the target Hessian
            const Matrix map = spd_inverse_sqrt(second_moment) * psd_sqrt(model.hessians_[k]);
            AgentDataset data;
            data.features = raw * map;
            Vector noise(n);
            for (Eigen::Index i = 0; i < n; ++i) noise(i) = spec.noise_scale * normal(rng);
            // remove the component of the label noise in the span of the features
            const Matrix gram = data.features.transpose() * data.features;
            const Vector coeffs = solve_linear(gram, data.features.transpose() * noise);
            noise -= data.features * coeffs;
            data.labels = data.features * model.minimizers_[k] + noise;
            for (Eigen::Index i = 0; i < n; ++i) lip = std::max(lip, data.features.row(i).squaredNorm());
            // Hessian realized by the data
            model.hessians_[k] = symmetrize(data.features.transpose() * data.features / static_cast<double>(n));
            model.datasets_.push_back(std::move(data));
        }
        model.lipschitz_ = lip;
    }
    return model;
}

NetworkRiskModel make_double_well_network(const DoubleWellSpec& spec) {
    if (spec.tilts.empty()) throw ValidationError("model.tilts", "need at least one agent tilt");
    const double total = std::accumulate(spec.tilts.begin(), spec.tilts.end(), 0.0);
    if (std::abs(total) > 1e-12) {
        throw ValidationError("model.tilts", "tilts must sum to zero (sum = " + std::to_string(total) + ")");
    }
    if (spec.dataset_size < 1) throw ValidationError("model.dataset_size", "dataset_size must be at least 1");
    if (spec.noise_scale < 0.0) throw ValidationError("model.noise_scale", "noise_scale must be non-negative");

    NetworkRiskModel model;
    model.family_ = RiskFamily::double_well;
    model.noise_mode_ = NoiseMode::dataset;
    model.agents_ = static_cast<int>(spec.tilts.size());
    model.dim_ = 1;
    model.tilts_ = spec.tilts;
    model.lipschitz_ = kDoubleWellLipschitz;

    Rng rng = make_rng(spec.seed, 5);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < spec.tilts.size(); ++k) {
        AgentDataset data;
        data.features.resize(spec.dataset_size, 1);
        for (Eigen::Index i = 0; i < spec.dataset_size; ++i) data.features(i, 0) = spec.noise_scale * normal(rng);
        data.features.array() -= data.features.mean();
        model.sample_mean_.push_back(data.features.mean());
        model.datasets_.push_back(std::move(data));
    }
    return model;
}

RiskValue global_eval(const NetworkRiskModel& model, const Vector& w) {
    if (w.size() != model.dim()) throw ValidationError("w", "dimension mismatch");
    RiskValue out;
    out.gradient = Vector::Zero(model.dim());
    for (int k = 0; k < model.agents(); ++k) {
        out.value += model.agent_risk(k, w);
        out.gradient += model.agent_gradient(k, w);
    }
    out.value /= model.agents();
    out.gradient /= model.agents();
    return out;
}

Vector minibatch_gradient(const NetworkRiskModel& model, int k, const Vector& w, int batch, Rng& rng) {
    if (batch < 1) throw ValidationError("B", "batch size must be at least 1");
    if (model.noise_mode() == NoiseMode::additive) {
        return model.agent_gradient(k, w) + model.additive_noise(k, batch, rng);
    }
    const auto& data = model.dataset(k);
    std::uniform_int_distribution<Eigen::Index> pick(0, data.size() - 1);
    if (model.family() == RiskFamily::double_well) {
        // ∇Q is affine in the sample, so averaging the samples is exact
        double sum = 0.0;
        for (int b = 0; b < batch; ++b) sum += data.features(pick(rng), 0);
        Vector g(1);
        g(0) = dw_slope(w(0), model.tilts()[static_cast<std::size_t>(k)] + sum / batch);
        return g;
    }
    Vector g = Vector::Zero(model.dim());
    for (int b = 0; b < batch; ++b) g += model.sample_gradient(k, w, pick(rng));
    return g / static_cast<double>(batch);
}

Flatness flatness_of(const Matrix& hessian) {
    Flatness f;
    f.trace = hessian.trace();
    f.spectral_norm = spectral_norm(hessian);
    f.frobenius_norm = hessian.norm();
    return f;
}

bool flatness_chain_holds(const Flatness& f, int dim, double slack) {
    auto le = [slack](double a, double b) { return a <= b + slack * std::max({1.0, std::abs(a), std::abs(b)}); };
    return le(f.trace / dim, f.spectral_norm) && le(f.spectral_norm, f.frobenius_norm) &&
           le(f.frobenius_norm, f.trace) && le(f.trace, dim * f.spectral_norm);
}

LocalMinimumInfo minimizer_summary(const NetworkRiskModel& model, MinimumSelector which) {
    LocalMinimumInfo info;
    const int k_count = model.agents();
    const int m = model.dim();

    if (model.family() == RiskFamily::quadratic) {
        // J is exactly quadratic: one Newton step from the origin lands on w⋆
        const Vector origin = Vector::Zero(m);
        Matrix hessian_sum = Matrix::Zero(m, m);
        for (int k = 0; k < k_count; ++k) hessian_sum += model.agent_hessian(k, origin);
        const Vector grad_sum = global_eval(model, origin).gradient * k_count;
        info.w_star = -solve_linear(hessian_sum, grad_sum);
    } else {
        double c = 0.0;
        for (int k = 0; k < k_count; ++k) c += model.agent_gradient(k, Vector::Zero(1))(0);
        c /= k_count;
        const double seed = which == MinimumSelector::minus ? -1.0 : 1.0;
        info.w_star = Vector::Constant(1, newton_root(seed, c));
        if (dw_curvature(info.w_star(0)) <= 0.0) {
            throw ConvergenceError("minimizer_summary: Newton refinement reached a non-minimizing stationary point");
        }
        const double middle = newton_root(0.0, c);
        Basin basin;
        constexpr double inf = std::numeric_limits<double>::infinity();
        basin.lower = info.w_star(0) > middle ? middle : -inf;
        basin.upper = info.w_star(0) > middle ? inf : middle;
        info.basin = basin;
    }

    const auto at_min = global_eval(model, info.w_star);
    info.risk_at_minimum = at_min.value;
    if (info.basin) {
        info.basin->barrier = global_eval(model, Vector::Constant(1, info.w_star(0) > 0 ? info.basin->lower
                                                                                          : info.basin->upper))
                                  .value -
                              at_min.value;
    }

    info.d.resize(static_cast<Eigen::Index>(k_count) * m);
    info.h_bar = Matrix::Zero(m, m);
    info.r_bar = Matrix::Zero(m, m);
    for (int k = 0; k < k_count; ++k) {
        info.hessians.push_back(model.agent_hessian(k, info.w_star));
        info.h_bar += info.hessians.back();
        info.d.segment(static_cast<Eigen::Index>(k) * m, m) = model.agent_gradient(k, info.w_star);
        info.noise_blocks.push_back(model.noise_covariance(k, info.w_star));
        info.r_bar += info.noise_blocks.back();
    }
    info.h_bar /= k_count;
    info.r_bar /= static_cast<double>(k_count) * k_count;
    for (const auto& h : info.hessians) info.epsilon = std::max(info.epsilon, spectral_norm(h - info.h_bar));
    info.flatness = flatness_of(info.h_bar);
    return info;
}

NoiseMoments estimate_noise_moments(const NetworkRiskModel& model, int k, const Vector& w, int batch, int reps,
                                    Rng& rng) {
    if (reps < 2) throw ValidationError("reps", "need at least two replications");
    const int m = model.dim();
    const Vector exact = model.agent_gradient(k, w);
    Matrix samples(reps, m);
    for (int r = 0; r < reps; ++r) samples.row(r) = (minibatch_gradient(model, k, w, batch, rng) - exact).transpose();

    NoiseMoments out;
    out.reps = reps;
    out.mean = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - out.mean.transpose();
    out.covariance = centered.transpose() * centered / static_cast<double>(reps - 1);
    out.mean_stderr = (out.covariance.diagonal().array() / reps).sqrt().matrix();
    out.covariance_stderr.resize(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            const Vector products = centered.col(i).cwiseProduct(centered.col(j));
            const double mean = products.mean();
            const double var = (products.array() - mean).square().sum() / (reps - 1);
            out.covariance_stderr(i, j) = std::sqrt(var / reps);
        }
    }
    return out;
}

}  // namespace driftlab
