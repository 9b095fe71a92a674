#include "flexpilot/dqn.hpp"

#include "flexpilot/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>

namespace flexpilot::gym {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 over the pair
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Eigen::VectorXf to_vector(const Observation& obs) {
    Eigen::VectorXf v(kObservationSize);
    for (std::size_t i = 0; i < kObservationSize; ++i)
        v[static_cast<Eigen::Index>(i)] = static_cast<float>(obs[i]);
    return v;
}

std::size_t argmax(const double* q, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (q[i] > q[best])
            best = i;
    return best;
}

} // namespace

void DqnHyper::validate() const {
    if (total_steps == 0 || batch_size == 0 || replay_capacity < batch_size)
        throw InvalidInput("DQN needs steps, a batch size and a replay buffer at least one batch large");
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw InvalidInput("discount must lie in [0, 1]");
    if (target_sync_steps == 0 || train_every == 0 || zones == 0 || zone_window == 0)
        throw InvalidInput("DQN periods must be positive");
    if (!(learning_rate >= 0.0) || !(reward_scale > 0.0))
        throw InvalidInput("learning rate must be >= 0 and reward scale > 0");
    if (eps_start < 0 || eps_start > 1 || eps_end < 0 || eps_end > 1 || eps_fraction < 0)
        throw InvalidInput("epsilon schedule out of range");
}

double DqnHyper::epsilon_at(std::size_t step) const {
    const double horizon = eps_fraction * static_cast<double>(total_steps);
    if (horizon <= 0.0 || static_cast<double>(step) >= horizon)
        return eps_end;
    return eps_start + (eps_end - eps_start) * static_cast<double>(step) / horizon;
}

nlohmann::json to_json(const DqnHyper& h) {
    return {{"total_steps", h.total_steps},       {"gamma", h.gamma},
            {"replay_capacity", h.replay_capacity}, {"batch_size", h.batch_size},
            {"target_sync_steps", h.target_sync_steps}, {"eps_start", h.eps_start},
            {"eps_end", h.eps_end},               {"eps_fraction", h.eps_fraction},
            {"learning_rate", h.learning_rate},   {"reward_scale", h.reward_scale},
            {"learning_starts", h.learning_starts}, {"train_every", h.train_every},
            {"zones", h.zones},                   {"zone_threshold", h.zone_threshold},
            {"zone_window", h.zone_window},       {"grad_clip", h.grad_clip},
            {"seed", h.seed}};
}

DqnHyper dqn_hyper_from_json(const nlohmann::json& j) {
    DqnHyper h;
    try {
        h.total_steps = j.value("total_steps", h.total_steps);
        h.gamma = j.value("gamma", h.gamma);
        h.replay_capacity = j.value("replay_capacity", h.replay_capacity);
        h.batch_size = j.value("batch_size", h.batch_size);
        h.target_sync_steps = j.value("target_sync_steps", h.target_sync_steps);
        h.eps_start = j.value("eps_start", h.eps_start);
        h.eps_end = j.value("eps_end", h.eps_end);
        h.eps_fraction = j.value("eps_fraction", h.eps_fraction);
        h.learning_rate = j.value("learning_rate", h.learning_rate);
        h.reward_scale = j.value("reward_scale", h.reward_scale);
        h.learning_starts = j.value("learning_starts", h.learning_starts);
        h.train_every = j.value("train_every", h.train_every);
        h.zones = j.value("zones", h.zones);
        h.zone_threshold = j.value("zone_threshold", h.zone_threshold);
        h.zone_window = j.value("zone_window", h.zone_window);
        h.grad_clip = j.value("grad_clip", h.grad_clip);
        h.seed = j.value("seed", h.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed DQN hyperparameters: ") + e.what());
    }
    h.validate();
    return h;
}

ArenaFactory randomized_arenas(const ArenaSpec& base) {
    base.validate();
    return [base](std::uint64_t episode) {
        ArenaSpec s = base;
        s.seed = mix(base.seed, episode);
        return generate_env(s);
    };
}

std::optional<double> zone_cap(std::size_t zone, std::size_t zones, const ArenaSpec& spec) {
    if (zone + 1 >= zones)
        return std::nullopt;
    return spec.diagonal() * static_cast<double>(zone + 1) / static_cast<double>(zones);
}

void write_log_csv(std::ostream& os, const std::vector<EpisodeLog>& log) {
    os << "episode,reward,cumulative_reward,epsilon,zone,success\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.6f,%zu,%d\n", e.episode, e.reward,
                      e.cumulative_reward, e.epsilon, e.zone, e.success ? 1 : 0);
        os << buf;
    }
}

// Dense ReLU MLP in single precision with per-parameter Adam moments.
class QNetwork {
public:
    QNetwork(const quant::NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
        std::mt19937_64 rng(seed);
        for (const auto& l : spec.layers) {
            const float bound = std::sqrt(6.0f / static_cast<float>(l.in_dim));
            std::uniform_real_distribution<float> d(-bound, bound);
            Eigen::MatrixXf w(l.out_dim, l.in_dim);
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c)
                    w(r, c) = d(rng);
            if (l.activation == quant::Activation::identity)
                w *= 0.1f;
            W.push_back(w);
            b.push_back(Eigen::VectorXf::Zero(l.out_dim));
            mW.push_back(Eigen::MatrixXf::Zero(l.out_dim, l.in_dim));
            vW.push_back(Eigen::MatrixXf::Zero(l.out_dim, l.in_dim));
            mb.push_back(Eigen::VectorXf::Zero(l.out_dim));
            vb.push_back(Eigen::VectorXf::Zero(l.out_dim));
        }
    }

    Eigen::MatrixXf forward(const Eigen::MatrixXf& x) const {
        Eigen::MatrixXf a = x;
        for (std::size_t l = 0; l < W.size(); ++l) {
            Eigen::MatrixXf z = (W[l] * a).colwise() + b[l];
            if (spec_.layers[l].activation == quant::Activation::relu)
                z = z.cwiseMax(0.0f);
            a = std::move(z);
        }
        return a;
    }

    // Squared-error regression of Q(x, action) toward target; returns the mean loss.
    double train(const Eigen::MatrixXf& x, const std::vector<std::size_t>& actions,
                 const Eigen::VectorXf& target, double lr, double clip) {
        const std::size_t L = W.size();
        std::vector<Eigen::MatrixXf> acts{x};
        for (std::size_t l = 0; l < L; ++l) {
            Eigen::MatrixXf z = (W[l] * acts.back()).colwise() + b[l];
            if (spec_.layers[l].activation == quant::Activation::relu)
                z = z.cwiseMax(0.0f);
            acts.push_back(std::move(z));
        }
        const auto batch = static_cast<Eigen::Index>(actions.size());
        Eigen::MatrixXf delta = Eigen::MatrixXf::Zero(acts.back().rows(), batch);
        double loss = 0.0;
        for (Eigen::Index i = 0; i < batch; ++i) {
            const auto a = static_cast<Eigen::Index>(actions[static_cast<std::size_t>(i)]);
            const float err = acts.back()(a, i) - target[i];
            loss += 0.5 * double(err) * double(err);
            delta(a, i) = err / static_cast<float>(batch);
        }
        loss /= static_cast<double>(batch);
        if (!std::isfinite(loss))
            return loss;

        std::vector<Eigen::MatrixXf> gW(L);
        std::vector<Eigen::VectorXf> gb(L);
        for (std::size_t l = L; l-- > 0;) {
            gW[l] = delta * acts[l].transpose();
            gb[l] = delta.rowwise().sum();
            if (l > 0) {
                Eigen::MatrixXf back = W[l].transpose() * delta;
                delta = back.cwiseProduct((acts[l].array() > 0.0f).cast<float>().matrix());
            }
        }
        double norm2 = 0.0;
        for (std::size_t l = 0; l < L; ++l)
            norm2 += double(gW[l].squaredNorm()) + double(gb[l].squaredNorm());
        const double norm = std::sqrt(norm2);
        const float factor = (clip > 0.0 && norm > clip) ? static_cast<float>(clip / norm) : 1.0f;

        ++t_;
        const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
        const float c1 = 1.0f - std::pow(b1, static_cast<float>(t_));
        const float c2 = 1.0f - std::pow(b2, static_cast<float>(t_));
        const float step = static_cast<float>(lr);
        auto adam = [&](auto& p, auto& m, auto& v, const auto& g) {
            m = b1 * m + (1.0f - b1) * g;
            v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
            p.array() -= step * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        };
        for (std::size_t l = 0; l < L; ++l) {
            gW[l] *= factor;
            gb[l] *= factor;
            adam(W[l], mW[l], vW[l], gW[l]);
            adam(b[l], mb[l], vb[l], gb[l]);
        }
        return loss;
    }

    quant::WeightSet weights() const {
        quant::WeightSet w;
        for (std::size_t l = 0; l < W.size(); ++l) {
            quant::LayerWeights lw;
            lw.weights.resize(static_cast<std::size_t>(W[l].size()));
            for (Eigen::Index r = 0; r < W[l].rows(); ++r)
                for (Eigen::Index c = 0; c < W[l].cols(); ++c)
                    lw.weights[static_cast<std::size_t>(r * W[l].cols() + c)] = W[l](r, c);
            lw.bias.assign(b[l].data(), b[l].data() + b[l].size());
            w.layers.push_back(std::move(lw));
        }
        return w;
    }

    void copy_params_from(const QNetwork& o) {
        W = o.W;
        b = o.b;
    }

private:
    quant::NetworkSpec spec_;
    std::vector<Eigen::MatrixXf> W, mW, vW;
    std::vector<Eigen::VectorXf> b, mb, vb;
    long t_ = 0;
};

struct DqnAgent::Replay {
    std::size_t capacity;
    std::size_t size = 0;
    std::size_t head = 0;
    Eigen::MatrixXf obs, next;
    std::vector<std::size_t> action;
    std::vector<float> reward;
    std::vector<bool> done;

    explicit Replay(std::size_t cap)
        : capacity(cap), obs(kObservationSize, cap), next(kObservationSize, cap), action(cap), reward(cap),
          done(cap) {}
};

DqnAgent::DqnAgent(const quant::NetworkSpec& spec, const DqnHyper& hyper) : spec_(spec), hyper_(hyper) {
    spec.validate();
    hyper.validate();
    if (spec.input_dim != kObservationSize || spec.output_dim() != kActionCount)
        throw ShapeError("policy network must map 160 inputs to 25 actions");
    online_ = std::make_unique<QNetwork>(spec, mix(hyper.seed, 0x11));
    target_ = std::make_unique<QNetwork>(*online_);
    replay_ = std::make_unique<Replay>(hyper.replay_capacity);
}

DqnAgent::~DqnAgent() = default;
DqnAgent::DqnAgent(DqnAgent&&) noexcept = default;

std::size_t DqnAgent::act(const Observation& obs, double epsilon, std::mt19937_64& rng) const {
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon)
        return std::uniform_int_distribution<std::size_t>(0, kActionCount - 1)(rng);
    const Eigen::MatrixXf q = online_->forward(to_vector(obs));
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < q.rows(); ++i)
        if (q(i, 0) > q(best, 0))
            best = i;
    return static_cast<std::size_t>(best);
}

void DqnAgent::remember(const Observation& obs, std::size_t action, double reward, const Observation& next,
                        bool done) {
    auto& r = *replay_;
    const auto col = static_cast<Eigen::Index>(r.head);
    r.obs.col(col) = to_vector(obs);
    r.next.col(col) = to_vector(next);
    r.action[r.head] = action;
    r.reward[r.head] = static_cast<float>(reward);
    r.done[r.head] = done;
    r.head = (r.head + 1) % r.capacity;
    r.size = std::min(r.size + 1, r.capacity);
}

double DqnAgent::train_step(std::mt19937_64& rng) {
    auto& r = *replay_;
    if (r.size == 0)
        return 0.0;
    const auto batch = static_cast<Eigen::Index>(hyper_.batch_size);
    std::uniform_int_distribution<std::size_t> pick(0, r.size - 1);
    Eigen::MatrixXf x(kObservationSize, batch), nx(kObservationSize, batch);
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch)), actions(idx.size());
    for (Eigen::Index i = 0; i < batch; ++i) {
        const std::size_t k = pick(rng);
        idx[static_cast<std::size_t>(i)] = k;
        actions[static_cast<std::size_t>(i)] = r.action[k];
        x.col(i) = r.obs.col(static_cast<Eigen::Index>(k));
        nx.col(i) = r.next.col(static_cast<Eigen::Index>(k));
    }
    const Eigen::MatrixXf qn = target_->forward(nx);
    Eigen::VectorXf y(batch);
    const auto scale = static_cast<float>(hyper_.reward_scale);
    const auto gamma = static_cast<float>(hyper_.gamma);
    for (Eigen::Index i = 0; i < batch; ++i) {
        const std::size_t k = idx[static_cast<std::size_t>(i)];
        y[i] = scale * r.reward[k] + (r.done[k] ? 0.0f : gamma * qn.col(i).maxCoeff());
    }
    const double loss = online_->train(x, actions, y, hyper_.learning_rate, hyper_.grad_clip);
    if (!std::isfinite(loss))
        throw DivergenceError("DQN loss became non-finite");
    return loss;
}

void DqnAgent::sync_target() { target_->copy_params_from(*online_); }

std::size_t DqnAgent::replay_size() const { return replay_->size; }

quant::WeightSet DqnAgent::online_weights() const { return online_->weights(); }
quant::WeightSet DqnAgent::target_weights() const { return target_->weights(); }

TrainResult dqn_train(const ArenaFactory& arenas, const quant::NetworkSpec& spec, const DqnHyper& hyper) {
    DqnAgent agent(spec, hyper);
    std::mt19937_64 rng(mix(hyper.seed, 0x22));
    TrainResult out;
    std::deque<bool> window;
    std::size_t zone = 0;
    double cumulative = 0.0;

    for (std::size_t ep = 0; out.steps < hyper.total_steps; ++ep) {
        const Arena arena = arenas(ep);
        AgentState state = reset(arena, rng, zone_cap(zone, hyper.zones, arena.spec));
        Observation obs = sense(arena, state);
        EpisodeLog entry;
        entry.episode = ep;
        entry.zone = zone;
        entry.epsilon = hyper.epsilon_at(out.steps);
        Outcome outcome = Outcome::running;
        while (outcome == Outcome::running) {
            const std::size_t a = agent.act(obs, hyper.epsilon_at(out.steps), rng);
            const StepResult res = step(arena, state, a);
            const Observation next = sense(arena, res.state);
            agent.remember(obs, a, res.reward, next, res.done);
            ++out.steps;
            ++entry.steps;
            entry.reward += res.reward;
            if (out.steps >= hyper.learning_starts && out.steps % hyper.train_every == 0)
                agent.train_step(rng);
            if (out.steps % hyper.target_sync_steps == 0) {
                agent.sync_target();
                ++out.target_syncs;
            }
            state = res.state;
            obs = next;
            outcome = res.outcome;
        }
        entry.success = outcome == Outcome::goal;
        cumulative += entry.reward;
        entry.cumulative_reward = cumulative;
        out.log.push_back(entry);

        window.push_back(entry.success);
        if (window.size() > hyper.zone_window)
            window.pop_front();
        if (window.size() == hyper.zone_window && zone + 1 < hyper.zones) {
            const auto wins = static_cast<double>(std::count(window.begin(), window.end(), true));
            if (wins / static_cast<double>(window.size()) >= hyper.zone_threshold) {
                ++zone;
                window.clear();
            }
        }
    }
    out.weights = agent.online_weights();
    out.final_zone = zone;
    return out;
}

Policy greedy_policy(const quant::NetworkSpec& spec, const quant::WeightSet& w) {
    w.validate(spec);
    return [spec, w](const Observation& obs, const AgentState&, std::mt19937_64&) {
        const auto q = quant::fc_forward_fp(spec, w, std::span<const double>(obs.data(), obs.size()));
        return argmax(q.data(), q.size());
    };
}

Policy random_policy() {
    return [](const Observation&, const AgentState&, std::mt19937_64& rng) {
        return std::uniform_int_distribution<std::size_t>(0, kActionCount - 1)(rng);
    };
}

Policy scripted_policy() {
    return [](const Observation&, const AgentState& s, std::mt19937_64&) { return goal_seeking_action(s); };
}

EvalStats evaluate_policy(const ArenaFactory& arenas, const Policy& policy, std::size_t episodes,
                          std::uint64_t seed) {
    EvalStats st;
    st.episodes = episodes;
    double steps = 0.0, rewards = 0.0;
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        const Arena arena = arenas(ep);
        std::mt19937_64 rng(mix(seed, ep));
        AgentState state = reset(arena, rng);
        Outcome outcome = Outcome::running;
        while (outcome == Outcome::running) {
            const StepResult res = step(arena, state, policy(sense(arena, state), state, rng));
            rewards += res.reward;
            state = res.state;
            outcome = res.outcome;
        }
        steps += state.step_index;
        st.successes += outcome == Outcome::goal;
        st.collisions += outcome == Outcome::collision;
        st.timeouts += outcome == Outcome::timeout;
    }
    if (episodes > 0) {
        st.success_rate = static_cast<double>(st.successes) / static_cast<double>(episodes);
        st.mean_steps = steps / static_cast<double>(episodes);
        st.mean_reward = rewards / static_cast<double>(episodes);
    }
    return st;
}

EvalStats evaluate(const quant::WeightSet& w, const quant::NetworkSpec& spec, const ArenaSpec& arena,
                   std::size_t episodes, std::uint64_t eval_seed) {
    ArenaSpec held_out = arena;
    held_out.seed = mix(arena.seed, eval_seed);
    return evaluate_policy(randomized_arenas(held_out), greedy_policy(spec, w), episodes, eval_seed);
}

double linear_slope(const std::vector<double>& y) {
    const auto n = static_cast<double>(y.size());
    if (y.size() < 2)
        return 0.0;
    const double mx = (n - 1) / 2.0;
    double my = 0.0;
    for (double v : y)
        my += v;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double dx = static_cast<double>(i) - mx;
        sxy += dx * (y[i] - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

} // namespace flexpilot::gym
