#include "driftlab/dynamics.hpp"

#include "driftlab/errors.hpp"
#include "driftlab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace driftlab {

namespace {

constexpr int kReplicationBlock = 64;

void check_inputs(const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
                  AlgorithmKind alg, const RunConfig& cfg) {
    cfg.check();
    if (info.agents() != model.agents() || info.dim() != model.dim()) {
        throw ValidationError("info", "minimum summary does not match the model");
    }
    if (alg != AlgorithmKind::centralized && a.agents() != model.agents()) {
        throw ValidationError("topology.K", "combination matrix size does not match model K");
    }
}

Matrix combination_or_identity(const CombinationMatrix& a, AlgorithmKind alg, int agents) {
    if (alg == AlgorithmKind::centralized) return Matrix::Identity(agents, agents);
    return a.weights;
}

// Per-step bookkeeping shared by the true recursion and the short-term model.
class Recorder {
public:
    Recorder(const NetworkRiskModel& model, const LocalMinimumInfo& info, const RunConfig& cfg, Trajectory& out)
        : model_(model), info_(info), cfg_(cfg), out_(out) {}

    // Returns false when the run must stop (divergence).
    bool observe(int step, const Matrix& w) {
        const double largest = w.size() ? w.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(largest) || largest > kDivergenceThreshold) {
            out_.diverged_step = step;
            return false;
        }
        const Vector c = w.rowwise().mean();
        if (info_.basin && !out_.escape_step && !info_.basin->contains(c(0))) out_.escape_step = step;
        if (step % cfg_.record_every == 0 || step == cfg_.n_steps - 1) {
            out_.records.push_back(make_record(step, w, c));
            if (cfg_.keep_states) out_.states.push_back(w);
        }
        return true;
    }

private:
    TrajectoryRecord make_record(int step, const Matrix& w, const Vector& c) const {
        TrajectoryRecord rec;
        rec.step = step;
        rec.centroid = c;
        const int k_count = static_cast<int>(w.cols());
        double risk = 0.0;
        for (int k = 0; k < k_count; ++k) risk += global_eval(model_, w.col(k)).value;
        rec.excess_risk = risk / k_count - info_.risk_at_minimum;
        rec.consensus_distance = (w.colwise() - c).squaredNorm();
        rec.error_norm_sq = (w.colwise() - info_.w_star).squaredNorm();
        rec.centroid_error_sq = k_count * (c - info_.w_star).squaredNorm();
        return rec;
    }

    const NetworkRiskModel& model_;
    const LocalMinimumInfo& info_;
    const RunConfig& cfg_;
    Trajectory& out_;
};

Matrix initial_state(const LocalMinimumInfo& info, AlgorithmKind alg, const RunConfig& cfg, Rng& rng) {
    const int k_count = info.agents();
    Matrix w = info.w_star.replicate(1, k_count);
    if (cfg.init == InitKind::gaussian) {
        for (int k = 0; k < k_count; ++k) w.col(k) += cfg.sigma0 * standard_normal_vector(info.dim(), rng);
        if (alg == AlgorithmKind::centralized) w = w.col(0).replicate(1, k_count);
    }
    return w;
}

// E ↦ (E·A₁ − μ·diag{H_k}E + μD + μS)·A₂ in M×K layout.
Matrix unified_step(const Matrix& error, const LocalMinimumInfo& info, const MixingPair& pair, double mu,
                    const Matrix& noise) {
    const int k_count = info.agents();
    const int m = info.dim();
    Matrix inner = error * pair.first;
    for (int k = 0; k < k_count; ++k) {
        inner.col(k).noalias() -= mu * (info.hessians[static_cast<std::size_t>(k)] * error.col(k));
    }
    inner += mu * Eigen::Map<const Matrix>(info.d.data(), m, k_count);
    inner += mu * noise;
    return inner * pair.second;
}

}  // namespace

std::string to_string(AlgorithmKind alg) {
    switch (alg) {
        case AlgorithmKind::centralized: return "centralized";
        case AlgorithmKind::consensus: return "consensus";
        case AlgorithmKind::diffusion: return "diffusion";
    }
    return "centralized";
}

AlgorithmKind parse_algorithm(const std::string& name) {
    if (name == "centralized") return AlgorithmKind::centralized;
    if (name == "consensus") return AlgorithmKind::consensus;
    if (name == "diffusion") return AlgorithmKind::diffusion;
    throw ValidationError("algorithms", "unknown algorithm '" + name + "'");
}

MixingPair mixing_pair(AlgorithmKind alg, const Matrix& a) {
    const Eigen::Index k = a.rows();
    const Matrix identity = Matrix::Identity(k, k);
    switch (alg) {
        case AlgorithmKind::consensus: return {a, identity};
        case AlgorithmKind::diffusion: return {identity, a};
        case AlgorithmKind::centralized: return {identity, Matrix::Constant(k, k, 1.0 / static_cast<double>(k))};
    }
    return {identity, identity};
}

double RunConfig::step_size(int n) const {
    if (!lr_drops) return mu;
    if (4 * n >= 3 * n_steps) return mu / 100.0;
    if (2 * n >= n_steps) return mu / 10.0;
    return mu;
}

void RunConfig::check() const {
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ValidationError("run.mu", "step size must be finite and non-negative");
    if (batch < 1) throw ValidationError("run.B", "batch size must be at least 1");
    if (n_steps < 1) throw ValidationError("run.n_steps", "n_steps must be at least 1");
    if (record_every < 1) throw ValidationError("run.record_every", "record_every must be at least 1");
    if (init == InitKind::gaussian && !(sigma0 >= 0.0)) throw ValidationError("run.sigma0", "sigma0 must be non-negative");
}

double consensus_distance(const NetworkState& state) {
    const Vector c = state.w.rowwise().mean();
    return (state.w.colwise() - c).squaredNorm();
}

Vector centroid(const NetworkState& state) { return state.w.rowwise().mean(); }

Trajectory run_trajectory(const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
                          AlgorithmKind alg, const RunConfig& cfg, Rng& rng) {
    check_inputs(model, info, a, alg, cfg);
    const int k_count = model.agents();
    const int m = model.dim();
    const Matrix mix = combination_or_identity(a, alg, k_count);

    Trajectory out;
    Recorder recorder(model, info, cfg, out);
    Matrix w = initial_state(info, alg, cfg, rng);
    out.states.reserve(cfg.keep_states ? static_cast<std::size_t>(cfg.n_steps / cfg.record_every + 2) : 0);
    if (cfg.keep_noise) out.noise.reserve(static_cast<std::size_t>(cfg.n_steps));
    out.initial = w;

    Matrix grads(m, k_count);
    for (int n = 0; n < cfg.n_steps; ++n) {
        const double mu = cfg.step_size(n);
        for (int k = 0; k < k_count; ++k) {
            const Vector at = alg == AlgorithmKind::centralized ? Vector(w.col(0)) : Vector(w.col(k));
            grads.col(k) = minibatch_gradient(model, k, at, cfg.batch, rng);
        }
        if (cfg.keep_noise) {
            Matrix noise(m, k_count);
            for (int k = 0; k < k_count; ++k) {
                const Vector at = alg == AlgorithmKind::centralized ? Vector(w.col(0)) : Vector(w.col(k));
                noise.col(k) = grads.col(k) - model.agent_gradient(k, at);
            }
            out.noise.push_back(std::move(noise));
        }
        switch (alg) {
            case AlgorithmKind::consensus:
                w = w * mix - mu * grads;
                break;
            case AlgorithmKind::diffusion:
                w = (w - mu * grads) * mix;
                break;
            case AlgorithmKind::centralized: {
                const Vector next = w.col(0) - mu * grads.rowwise().mean();
                w = next.replicate(1, k_count);
                break;
            }
        }
        if (!recorder.observe(n, w)) break;
    }
    return out;
}

std::vector<Matrix> run_unified_recursion(const LocalMinimumInfo& info, const Matrix& a, AlgorithmKind alg,
                                          const RunConfig& cfg, const std::vector<Matrix>& noise,
                                          const Matrix& initial_error) {
    cfg.check();
    const int k_count = info.agents();
    if (static_cast<int>(noise.size()) < cfg.n_steps) throw ValidationError("noise", "need one noise matrix per step");
    const MixingPair pair = mixing_pair(alg, alg == AlgorithmKind::centralized ? Matrix::Identity(k_count, k_count) : a);
    std::vector<Matrix> errors;
    errors.reserve(static_cast<std::size_t>(cfg.n_steps));
    Matrix error = initial_error;
    for (int n = 0; n < cfg.n_steps; ++n) {
        error = unified_step(error, info, pair, cfg.step_size(n), noise[static_cast<std::size_t>(n)]);
        errors.push_back(error);
    }
    return errors;
}

Trajectory run_short_term(const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
                          AlgorithmKind alg, const RunConfig& cfg, Rng& rng, ShortTermCoupling coupling,
                          const Trajectory* paired) {
    check_inputs(model, info, a, alg, cfg);
    const int k_count = model.agents();
    const int m = model.dim();
    if (coupling == ShortTermCoupling::coupled) {
        if (paired == nullptr || static_cast<int>(paired->noise.size()) < cfg.n_steps) {
            throw ValidationError("coupling", "coupled short-term run needs a paired trajectory recorded with keep_noise");
        }
    }
    const MixingPair pair =
        mixing_pair(alg, alg == AlgorithmKind::centralized ? Matrix::Identity(k_count, k_count) : a.weights);

    Trajectory out;
    Recorder recorder(model, info, cfg, out);
    const Matrix start = coupling == ShortTermCoupling::coupled ? paired->initial : initial_state(info, alg, cfg, rng);
    Matrix error = (-start).colwise() + info.w_star;
    out.initial = start;

    Matrix noise(m, k_count);
    for (int n = 0; n < cfg.n_steps; ++n) {
        if (coupling == ShortTermCoupling::coupled) {
            noise = paired->noise[static_cast<std::size_t>(n)];
        } else {
            for (int k = 0; k < k_count; ++k) {
                noise.col(k) = minibatch_gradient(model, k, info.w_star, cfg.batch, rng) - model.agent_gradient(k, info.w_star);
            }
        }
        if (cfg.keep_noise) out.noise.push_back(noise);
        error = unified_step(error, info, pair, cfg.step_size(n), noise);
        const Matrix w = (-error).colwise() + info.w_star;
        if (!recorder.observe(n, w)) break;
    }
    return out;
}

EnsembleStats ensemble_excess_risk(const NetworkRiskModel& model, const LocalMinimumInfo& info,
                                   const CombinationMatrix& a, AlgorithmKind alg, const RunConfig& cfg, int reps,
                                   unsigned workers) {
    check_inputs(model, info, a, alg, cfg);
    if (reps < 2) throw ValidationError("experiment.reps", "reps must be at least 2");

    std::vector<int> steps;
    for (int n = 0; n < cfg.n_steps; ++n) {
        if (n % cfg.record_every == 0 || n == cfg.n_steps - 1) steps.push_back(n);
    }
    const std::size_t n_rec = steps.size();

    // Per-block partial sums; blocks are fixed-size so the reduction order never depends on scheduling.
    struct Block {
        std::vector<double> count, mean, m2, cd_sum;
        std::vector<std::optional<int>> escape, diverged;
    };
    const std::size_t n_blocks = (static_cast<std::size_t>(reps) + kReplicationBlock - 1) / kReplicationBlock;
    std::vector<Block> blocks(n_blocks);

    RunConfig run_cfg = cfg;
    run_cfg.keep_states = false;
    run_cfg.keep_noise = false;

    parallel_for(n_blocks, resolve_workers(workers), [&](std::size_t b) {
        Block& blk = blocks[b];
        blk.count.assign(n_rec, 0.0);
        blk.mean.assign(n_rec, 0.0);
        blk.m2.assign(n_rec, 0.0);
        blk.cd_sum.assign(n_rec, 0.0);
        const std::size_t first = b * kReplicationBlock;
        const std::size_t last = std::min<std::size_t>(first + kReplicationBlock, static_cast<std::size_t>(reps));
        for (std::size_t r = first; r < last; ++r) {
            Rng rng = make_rng(cfg.seed, r);
            const Trajectory t = run_trajectory(model, info, a, alg, run_cfg, rng);
            blk.escape.push_back(t.escape_step);
            blk.diverged.push_back(t.diverged_step);
            if (t.diverged()) continue;
            for (std::size_t i = 0; i < t.records.size(); ++i) {
                const double x = t.records[i].excess_risk;
                blk.count[i] += 1.0;
                const double delta = x - blk.mean[i];
                blk.mean[i] += delta / blk.count[i];
                blk.m2[i] += delta * (x - blk.mean[i]);
                blk.cd_sum[i] += t.records[i].consensus_distance;
            }
        }
    });

    EnsembleStats stats;
    stats.reps = reps;
    std::vector<double> count(n_rec, 0.0), mean(n_rec, 0.0), m2(n_rec, 0.0), cd(n_rec, 0.0);
    for (const Block& blk : blocks) {
        for (std::size_t i = 0; i < n_rec; ++i) {
            if (blk.count[i] == 0.0) continue;
            const double total = count[i] + blk.count[i];
            const double delta = blk.mean[i] - mean[i];
            mean[i] += delta * blk.count[i] / total;
            m2[i] += blk.m2[i] + delta * delta * count[i] * blk.count[i] / total;
            count[i] = total;
            cd[i] += blk.cd_sum[i];
        }
        stats.escape_steps.insert(stats.escape_steps.end(), blk.escape.begin(), blk.escape.end());
        for (const auto& d : blk.diverged) {
            if (d) ++stats.diverged_reps;
        }
    }

    std::vector<int> diverged_steps;
    for (const Block& blk : blocks) {
        for (const auto& d : blk.diverged) {
            if (d) diverged_steps.push_back(*d);
        }
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < n_rec; ++i) {
        EnsembleStep s;
        s.step = steps[i];
        s.er_mean = count[i] > 0 ? mean[i] : nan;
        s.er_stderr = count[i] > 1 ? std::sqrt(m2[i] / (count[i] - 1.0) / count[i]) : nan;
        s.consensus_distance_mean = count[i] > 0 ? cd[i] / count[i] : nan;
        const auto escaped = std::count_if(stats.escape_steps.begin(), stats.escape_steps.end(),
                                           [&](const auto& e) { return e && *e <= s.step; });
        s.escaped_fraction = static_cast<double>(escaped) / reps;
        const auto diverged = std::count_if(diverged_steps.begin(), diverged_steps.end(),
                                            [&](int d) { return d <= s.step; });
        s.diverged_fraction = static_cast<double>(diverged) / reps;
        stats.steps.push_back(s);
    }
    return stats;
}

EscapeStats escape_statistics(const NetworkRiskModel& model, const LocalMinimumInfo& info,
                              const CombinationMatrix& a, AlgorithmKind alg, const RunConfig& cfg, int reps,
                              unsigned workers) {
    if (model.family() != RiskFamily::double_well || !info.basin) {
        throw ValidationError("model.family", "escape statistics need a double-well model (finite barrier)");
    }
    const EnsembleStats ens = ensemble_excess_risk(model, info, a, alg, cfg, reps, workers);
    EscapeStats out;
    out.reps = reps;
    double total = 0.0;
    for (const auto& e : ens.escape_steps) {
        if (e) {
            ++out.escaped;
            total += *e;
        }
    }
    out.mean_escape_time = out.escaped ? total / out.escaped : std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : ens.steps) {
        out.steps.push_back(s.step);
        out.escape_fraction_by_step.push_back(s.escaped_fraction);
        out.er_mean_by_step.push_back(s.er_mean);
        if (!out.er_crossing_step && s.er_mean >= info.basin->barrier) out.er_crossing_step = s.step;
    }
    return out;
}

}  // namespace driftlab
