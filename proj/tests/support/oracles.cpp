#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

namespace oracle {

using dtmdp::AbstractStep;
using dtmdp::AbstractTrajectory;
using dtmdp::ActionRepr;
using dtmdp::Entity;
using dtmdp::TopologyGraph;

namespace {

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = ex(rng) + 1e-3);
  for (auto& x : v) x /= s;
  return v;
}

std::size_t draw(const std::vector<double>& probs, Rng& rng) {
  std::discrete_distribution<std::size_t> d(probs.begin(), probs.end());
  return d(rng);
}

std::vector<ActionRepr> all_indices(std::size_t n) {
  std::vector<ActionRepr> out;
  for (std::size_t a = 0; a < n; ++a) out.push_back(ActionRepr::index(a));
  return out;
}

}  // namespace

// ---- graphs ---------------------------------------------------------------

TopologyGraph random_graph(std::size_t n, double p, Rng& rng) {
  std::vector<Entity> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back({"n" + std::to_string(i), i % 2 ? "Pod" : "Service"});
  std::bernoulli_distribution coin(p);
  std::vector<dtmdp::Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (u != v && coin(rng)) edges.emplace_back(u, v);
  return TopologyGraph(std::move(nodes), std::move(edges));
}

std::vector<std::vector<int>> floyd_warshall(const TopologyGraph& g) {
  const std::size_t n = g.node_count();
  const int inf = std::numeric_limits<int>::max() / 4;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (const auto& [u, v] : g.edges()) d[u][v] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  for (auto& row : d)
    for (auto& x : row)
      if (x >= inf) x = -1;
  return d;
}

std::optional<std::vector<double>> dense_hubs(const TopologyGraph& g, double max_ratio) {
  const auto n = static_cast<Eigen::Index>(g.node_count());
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [u, v] : g.edges()) e(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = 1.0;
  const Eigen::MatrixXd m = e * e.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const auto& vals = es.eigenvalues();  // ascending
  const double top = vals(n - 1);
  const double second = n > 1 ? vals(n - 2) : 0.0;
  if (top <= 0.0 || second / top > max_ratio) return std::nullopt;
  Eigen::VectorXd h = es.eigenvectors().col(n - 1);
  if (h.sum() < 0) h = -h;
  h /= h.norm();
  std::vector<double> out(h.data(), h.data() + n);
  for (auto& x : out) x = std::max(x, 0.0);
  return out;
}

// ---- small MDPs -----------------------------------------------------------

std::vector<double> one_hot(std::size_t i, std::size_t n) {
  std::vector<double> v(n, 0.0);
  v[i] = 1.0;
  return v;
}

DetMdp random_det_mdp(std::size_t n_states, std::size_t n_actions, Rng& rng) {
  std::uniform_int_distribution<std::size_t> nxt(0, n_states);
  std::uniform_real_distribution<double> rew(-1.0, 1.0);
  for (;;) {
    DetMdp m{n_states, n_actions, {}, {}};
    m.next.assign(n_states, std::vector<std::size_t>(n_actions));
    m.reward.assign(n_states, std::vector<double>(n_actions));
    for (std::size_t s = 0; s < n_states; ++s)
      for (std::size_t a = 0; a < n_actions; ++a) {
        m.next[s][a] = nxt(rng);
        m.reward[s][a] = rew(rng);
      }
    // terminal reachable from every state
    std::vector<bool> good(n_states, false);
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t s = 0; s < n_states; ++s) {
        if (good[s]) continue;
        for (std::size_t a = 0; a < n_actions; ++a) {
          const std::size_t t = m.next[s][a];
          if (t == n_states || good[t]) {
            good[s] = changed = true;
            break;
          }
        }
      }
    }
    if (std::all_of(good.begin(), good.end(), [](bool b) { return b; })) return m;
  }
}

std::vector<std::vector<double>> value_iteration(const DetMdp& m, double gamma) {
  std::vector<std::vector<double>> q(m.n_states, std::vector<double>(m.n_actions, 0.0));
  for (int it = 0; it < 100000; ++it) {
    double delta = 0.0;
    auto next = q;
    for (std::size_t s = 0; s < m.n_states; ++s)
      for (std::size_t a = 0; a < m.n_actions; ++a) {
        const std::size_t t = m.next[s][a];
        const double v = t == m.n_states ? 0.0 : *std::max_element(q[t].begin(), q[t].end());
        next[s][a] = m.reward[s][a] + gamma * v;
        delta = std::max(delta, std::abs(next[s][a] - q[s][a]));
      }
    q = std::move(next);
    if (delta < 1e-13) break;
  }
  return q;
}

std::vector<AbstractTrajectory> rollout_det(const DetMdp& m, std::size_t episodes,
                                            std::size_t max_len, Rng& rng) {
  std::uniform_int_distribution<std::size_t> start(0, m.n_states - 1);
  std::uniform_int_distribution<std::size_t> act(0, m.n_actions - 1);
  std::vector<AbstractTrajectory> out;
  std::vector<std::vector<bool>> seen(m.n_states, std::vector<bool>(m.n_actions, false));
  std::size_t covered = 0;
  while (out.size() < episodes || covered < m.n_states * m.n_actions) {
    AbstractTrajectory t;
    t.trajectory_id = "e" + std::to_string(out.size());
    t.scenario_id = "mdp";
    std::size_t s = start(rng);
    bool done = false;
    while (t.steps.size() <= max_len) {
      const std::size_t a = act(rng);
      AbstractStep st;
      st.state = one_hot(s, m.n_states);
      st.action = ActionRepr::index(a);
      st.candidates = all_indices(m.n_actions);
      st.reward = m.reward[s][a];
      t.steps.push_back(std::move(st));
      s = m.next[s][a];
      if (s == m.n_states) {
        done = true;
        break;
      }
    }
    if (!done || t.steps.size() > max_len) continue;
    for (const auto& st : t.steps) {
      const auto si = static_cast<std::size_t>(std::find(st.state.begin(), st.state.end(), 1.0) - st.state.begin());
      if (!seen[si][st.action.as_index()]) {
        seen[si][st.action.as_index()] = true;
        ++covered;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

StochMdp random_stoch_mdp(std::size_t n_states, std::size_t n_actions, double min_termination,
                          Rng& rng) {
  std::uniform_real_distribution<double> term(min_termination, min_termination + 0.2);
  std::uniform_real_distribution<double> rew(1.0, 2.0);
  StochMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.p.assign(n_states, std::vector<std::vector<double>>(n_actions));
  m.reward.assign(n_states, std::vector<double>(n_actions));
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) {
      const double keep = 1.0 - term(rng);
      auto row = random_simplex(n_states, rng);
      for (auto& x : row) x *= keep;
      m.p[s][a] = std::move(row);
      m.reward[s][a] = rew(rng);
    }
  return m;
}

std::vector<AbstractTrajectory> rollout_stoch(const StochMdp& m, std::size_t episodes, Rng& rng) {
  std::uniform_int_distribution<std::size_t> act(0, m.n_actions - 1);
  std::vector<AbstractTrajectory> out;
  for (std::size_t e = 0; e < episodes; ++e) {
    AbstractTrajectory t;
    t.trajectory_id = "e" + std::to_string(e);
    t.scenario_id = "mdp";
    std::size_t s = m.start;
    for (;;) {
      const std::size_t a = act(rng);
      AbstractStep st;
      st.state = one_hot(s, m.n_states);
      st.action = ActionRepr::index(a);
      st.candidates = all_indices(m.n_actions);
      st.reward = m.reward[s][a];
      t.steps.push_back(std::move(st));
      auto probs = m.p[s][a];
      const double kept = std::accumulate(probs.begin(), probs.end(), 0.0);
      probs.push_back(1.0 - kept);
      const std::size_t nxt = draw(probs, rng);
      if (nxt == m.n_states) break;
      s = nxt;
    }
    out.push_back(std::move(t));
  }
  return out;
}

double exact_policy_value(const StochMdp& m, const std::vector<std::vector<double>>& pi, double gamma) {
  const auto n = static_cast<Eigen::Index>(m.n_states);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t act = 0; act < m.n_actions; ++act) {
      r(static_cast<Eigen::Index>(s)) += pi[s][act] * m.reward[s][act];
      for (std::size_t t = 0; t < m.n_states; ++t)
        a(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) -= gamma * pi[s][act] * m.p[s][act][t];
    }
  const Eigen::VectorXd v = a.partialPivLu().solve(r);
  return v(static_cast<Eigen::Index>(m.start));
}

// ---- HMM --------------------------------------------------------------------

dtmdp::Hmm random_hmm(std::size_t k, std::size_t d, Rng& rng) {
  std::normal_distribution<double> mean(0.0, 3.0);
  std::uniform_real_distribution<double> var(0.3, 1.5);
  dtmdp::Hmm h;
  h.initial = random_simplex(k, rng);
  for (std::size_t i = 0; i < k; ++i) {
    h.transition.push_back(random_simplex(k, rng));
    std::vector<double> mu(d), v(d);
    for (std::size_t j = 0; j < d; ++j) {
      mu[j] = mean(rng);
      v[j] = var(rng);
    }
    h.means.push_back(mu);
    h.variances.push_back(v);
  }
  return h;
}

dtmdp::ObservationSequence sample_hmm(const dtmdp::Hmm& h, std::size_t t, Rng& rng) {
  dtmdp::ObservationSequence seq;
  std::size_t s = draw(h.initial, rng);
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<double> x(h.dim());
    for (std::size_t j = 0; j < x.size(); ++j) {
      std::normal_distribution<double> nd(h.means[s][j], std::sqrt(h.variances[s][j]));
      x[j] = nd(rng);
    }
    seq.push_back(std::move(x));
    s = draw(h.transition[s], rng);
  }
  return seq;
}

std::vector<std::size_t> brute_force_viterbi(const dtmdp::Hmm& h, const dtmdp::ObservationSequence& obs) {
  const std::size_t k = h.n_states();
  const std::size_t t = obs.size();
  auto log_em = [&](std::size_t s, const std::vector<double>& x) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const long double v = h.variances[s][j];
      const long double z = x[j] - h.means[s][j];
      acc += -0.5L * std::log(2.0L * std::numbers::pi_v<long double> * v) - z * z / (2.0L * v);
    }
    return acc;
  };
  std::size_t total = 1;
  for (std::size_t i = 0; i < t; ++i) total *= k;
  std::vector<std::size_t> best_path, path(t);
  long double best = -std::numeric_limits<long double>::infinity();
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < t; ++i) {
      path[i] = c % k;
      c /= k;
    }
    long double lp = std::log(static_cast<long double>(h.initial[path[0]])) + log_em(path[0], obs[0]);
    for (std::size_t i = 1; i < t; ++i)
      lp += std::log(static_cast<long double>(h.transition[path[i - 1]][path[i]])) + log_em(path[i], obs[i]);
    if (lp > best) {
      best = lp;
      best_path = path;
    }
  }
  return best_path;
}

// ---- reward learning --------------------------------------------------------

long double mlp_forward(std::span<const std::size_t> dims, std::span<const double> params,
                        std::span<const long double> x) {
  std::vector<long double> act(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    std::vector<long double> next(out, 0.0L);
    for (std::size_t o = 0; o < out; ++o) {
      long double z = 0.0L;
      for (std::size_t i = 0; i < in; ++i) z += static_cast<long double>(params[off + o * in + i]) * act[i];
      z += params[off + out * in + o];
      next[o] = (l + 2 < dims.size()) ? std::max(z, 0.0L) : z;
    }
    off += out * in + out;
    act = std::move(next);
  }
  if (off != params.size()) throw std::logic_error("parameter layout mismatch");
  return act.at(0);
}

long double trajectory_return(std::span<const std::size_t> dims, std::span<const double> params,
                              const dtmdp::FeatureLayout& layout, const AbstractTrajectory& traj,
                              long double discount) {
  long double g = 0.0L, w = 1.0L;
  for (const auto& st : traj.steps) {
    std::vector<long double> x(st.state.begin(), st.state.end());
    if (st.action.is_index()) {
      for (std::size_t a = 0; a < layout.action_dim; ++a) x.push_back(a == st.action.as_index() ? 1.0L : 0.0L);
    } else {
      for (double f : st.action.as_features()) x.push_back(f);
    }
    g += w * mlp_forward(dims, params, x);
    w *= discount;
  }
  return g;
}

long double trex_loss(std::span<const std::size_t> dims, std::span<const double> params,
                      const dtmdp::FeatureLayout& layout, const dtmdp::PreferencePair& pair,
                      std::span<const AbstractTrajectory> trajs, long double discount) {
  const long double gi = trajectory_return(dims, params, layout, trajs[pair.lower], discount);
  const long double gj = trajectory_return(dims, params, layout, trajs[pair.higher], discount);
  const long double d = gi - gj;
  return d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
}

long double mean_trex_loss(std::span<const std::size_t> dims, std::span<const double> params,
                           const dtmdp::FeatureLayout& layout, std::span<const dtmdp::PreferencePair> batch,
                           std::span<const AbstractTrajectory> trajs, long double discount) {
  long double s = 0.0L;
  for (const auto& p : batch) s += trex_loss(dims, params, layout, p, trajs, discount);
  return s / static_cast<long double>(batch.size());
}

std::vector<AbstractTrajectory> random_feature_trajs(std::size_t count, const dtmdp::FeatureLayout& layout,
                                                     std::size_t max_len, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::vector<AbstractTrajectory> out;
  for (std::size_t i = 0; i < count; ++i) {
    AbstractTrajectory t;
    t.trajectory_id = "t" + std::to_string(i);
    t.scheme = dtmdp::SchemeKind::Topology;
    const std::size_t n = len(rng);
    for (std::size_t k = 0; k < n; ++k) {
      AbstractStep st;
      for (std::size_t j = 0; j < layout.state_dim; ++j) st.state.push_back(nd(rng));
      std::vector<double> f(layout.action_dim);
      for (auto& x : f) x = nd(rng);
      st.action = ActionRepr::features(std::move(f));
      t.steps.push_back(std::move(st));
    }
    out.push_back(std::move(t));
  }
  return out;
}

RewardWorld random_reward_world(Rng& rng) {
  RewardWorld w;
  std::uniform_real_distribution<double> rew(-1.0, 1.0);
  w.reward.assign(w.n_states, std::vector<double>(w.n_actions));
  w.p.assign(w.n_states, std::vector<std::vector<double>>(w.n_actions));
  for (std::size_t s = 0; s < w.n_states; ++s)
    for (std::size_t a = 0; a < w.n_actions; ++a) {
      w.reward[s][a] = rew(rng);
      w.p[s][a] = random_simplex(w.n_states, rng);
    }
  return w;
}

std::pair<std::vector<AbstractTrajectory>, std::vector<double>> sample_reward_world(const RewardWorld& w,
                                                                                    std::size_t count, Rng& rng) {
  std::uniform_int_distribution<std::size_t> start(0, w.n_states - 1);
  std::vector<AbstractTrajectory> trajs;
  std::vector<double> returns;
  for (std::size_t i = 0; i < count; ++i) {
    // Each trajectory follows its own random stochastic policy, which spreads
    // the returns out.
    std::vector<std::vector<double>> pol;
    for (std::size_t s = 0; s < w.n_states; ++s) pol.push_back(random_simplex(w.n_actions, rng));
    AbstractTrajectory t;
    t.trajectory_id = "w" + std::to_string(i);
    t.scenario_id = "world";
    std::size_t s = start(rng);
    double g = 0.0;
    for (std::size_t k = 0; k < w.length; ++k) {
      const std::size_t a = draw(pol[s], rng);
      AbstractStep st;
      st.state = one_hot(s, w.n_states);
      st.action = ActionRepr::index(a);
      st.candidates = all_indices(w.n_actions);
      t.steps.push_back(std::move(st));
      g += w.reward[s][a];
      s = draw(w.p[s][a], rng);
    }
    trajs.push_back(std::move(t));
    returns.push_back(g);
  }
  return {std::move(trajs), std::move(returns)};
}

std::vector<double> to_scores(std::span<const double> returns, double lo, double hi) {
  std::vector<double> out;
  for (double g : returns) out.push_back(std::clamp(100.0 * (g - lo) / (hi - lo), 0.0, 100.0));
  return out;
}

// ---- statistics -------------------------------------------------------------

long double student_t_cdf(long double t, long double df) {
  const long double c = std::exp(std::lgamma((df + 1.0L) / 2.0L) - std::lgamma(df / 2.0L)) /
                        std::sqrt(df * std::numbers::pi_v<long double>);
  auto density = [&](long double x) { return c * std::pow(1.0L + x * x / df, -(df + 1.0L) / 2.0L); };
  using GK = boost::math::quadrature::gauss_kronrod<long double, 61>;
  const long double inf = std::numeric_limits<long double>::infinity();
  const long double a = std::abs(t);
  const long double tail = GK::integrate(density, a, inf, 20, 1e-18L);
  return t >= 0 ? 1.0L - tail : tail;
}

long double paired_t_p(std::span<const double> a, std::span<const double> b, long double* t_out) {
  const std::size_t n = a.size();
  std::vector<long double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<long double>(a[i]) - b[i];
  long double mean = 0.0L;
  for (auto x : d) mean += x;
  mean /= n;
  long double ss = 0.0L;
  for (auto x : d) ss += (x - mean) * (x - mean);
  const long double sd = std::sqrt(ss / (n - 1));
  const long double t = mean / (sd / std::sqrt(static_cast<long double>(n)));
  if (t_out) *t_out = t;
  const long double df = static_cast<long double>(n - 1);
  // two-sided: 2 * upper tail of |t|
  return 2.0L * student_t_cdf(-std::abs(t), df);
}

double nemenyi_q_infinite_df(std::size_t k, double alpha) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double inf = std::numeric_limits<double>::infinity();
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  auto Phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  auto range_cdf = [&](double q) {
    auto f = [&](double z) { return phi(z) * std::pow(Phi(z) - Phi(z - q), static_cast<double>(k - 1)); };
    return static_cast<double>(k) * GK::integrate(f, -inf, inf, 15, 1e-14);
  };
  auto target = [&](double q) { return range_cdf(q) - (1.0 - alpha); };
  boost::math::tools::eps_tolerance<double> tol(50);
  std::uintmax_t iters = 200;
  const auto [lo, hi] = boost::math::tools::toms748_solve(target, 0.1, 10.0, tol, iters);
  return 0.5 * (lo + hi) / std::sqrt(2.0);
}

}  // namespace oracle
