// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   acceptance            run every criterion
//   acceptance 1 4 9      run a subset
// Exit status is 0 only if every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "miranda/experiment/runner.hpp"
#include "miranda/model/checkpoint.hpp"
#include "miranda/train/batching.hpp"
#include "miranda/train/thermal.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace miranda;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[violated] " << what << "; ";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<double> random_years(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> y(1990, 2020);
  std::vector<double> out(n);
  for (double& v : out) v = y(rng);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("miranda_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

// ---------------------------------------------------------------------------
// 1. Gradients

void gradients(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst_op = 0.0;
  std::string worst_name;
  const auto cases = testing::op_cases();
  for (const auto& c : cases) {
    const double e = testing::worst_op_error(c, 100, rng);
    if (e > worst_op) {
      worst_op = e;
      worst_name = c.name;
    }
  }
  v.require(worst_op < 1e-4, "operator " + worst_name);

  std::bernoulli_distribution coin(0.5);
  double w_mse = 0, w_rank = 0, w_bce = 0, w_coral = 0;
  for (int t = 0; t < 100; ++t) {
    Tensor y = random_tensor({3, 4}, rng);
    y[t % 12] = NAN;
    auto r = testing::check_gradients([&](Graph&, const std::vector<Var>& in) { return mse(in[0], y); },
                                      {random_tensor({3, 4}, rng)});
    w_mse = std::max(w_mse, testing::relative_error(r.analytic[0], r.numeric[0]));

    const std::size_t n = 2 + t % 7;
    const auto years = random_years(n, rng);
    r = testing::check_gradients(
        [&](Graph&, const std::vector<Var>& in) { return rank_n_contrast(in[0], years, {0.5}); },
        {testing::random_away_from_zero({n, 5}, rng)});
    w_rank = std::max(w_rank, testing::relative_error(r.analytic[0], r.numeric[0]));

    std::vector<int> d(6);
    for (int& x : d) x = coin(rng);
    r = testing::check_gradients([&](Graph&, const std::vector<Var>& in) { return binary_domain_loss(in[0], d); },
                                 {random_tensor({6, 1}, rng, -4.0, 4.0)});
    w_bce = std::max(w_bce, testing::relative_error(r.analytic[0], r.numeric[0]));

    r = testing::check_gradients([&](Graph&, const std::vector<Var>& in) { return coral(in[0], in[1]); },
                                 {random_tensor({5, 3}, rng), random_tensor({4, 3}, rng)});
    for (int k = 0; k < 2; ++k) w_coral = std::max(w_coral, testing::relative_error(r.analytic[k], r.numeric[k]));
  }
  v.require(w_mse < 1e-4, "mse");
  v.require(w_rank < 1e-4, "rank_n_contrast");
  v.require(w_bce < 1e-4, "binary domain");
  v.require(w_coral < 1e-4, "coral");
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, "runtime");
  v.detail << cases.size() << " operators x 100, worst " << worst_op << " (" << worst_name << "); losses mse "
           << w_mse << " rank " << w_rank << " bce " << w_bce << " coral " << w_coral << "; " << secs << " s";
}

// ---------------------------------------------------------------------------
// 2. Gradient reversal

// Dates depend on the mean of channel 0; `shift` moves the inputs only.
PreparedSet make_set(std::size_t n, std::uint64_t seed, double shift = 0.0, std::size_t T = 12, std::size_t C = 3,
                     std::size_t S = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  PreparedSet p;
  p.x = Tensor({n, T, C});
  p.y = Tensor({n, S});
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const double x = n01(rng) + shift;
        p.x[(i * T + t) * C + c] = x;
        if (c == 0) m += x / static_cast<double>(T);
      }
    for (std::size_t s = 0; s < S; ++s) p.y[i * S + s] = 120.0 - 8.0 * (s + 1.0) * m + 0.5 * n01(rng);
    p.guidance.push_back(1990.0 + static_cast<double>(i));
    p.rows.push_back(i);
  }
  return p;
}

TrainConfig small(Method m) {
  TrainConfig c;
  c.method = m;
  c.dim = 8;
  c.heads = 2;
  c.ffn_dim = 8;
  c.disc_dim = 8;
  c.rank_dim = 8;
  c.batch_size = 8;
  c.lr = 1e-2;
  c.seed = 3;
  return c;
}

void gradient_reversal_contract(Verdict& v) {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> lam(0.0, 2.0);
  bool forward_exact = true, disc_exact = true;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Tensor x0 = random_tensor({3, 4}, rng);
    const double lambda = lam(rng);
    Parameter a("a", random_tensor({4, 5}, rng)), w("w", random_tensor({5, 2}, rng));
    auto run = [&](bool reversed) {
      Graph g;
      Var h = matmul(g.constant(x0), g.param(a));
      Var r = reversed ? gradient_reversal(h, lambda) : h;
      if (reversed) forward_exact &= bit_equal(r.value(), h.value());
      g.backward(sum_all(exp(scale(matmul(relu(r), g.param(w)), 0.3))));
      return std::make_pair(a.grad, w.grad);
    };
    const auto plain = run(false), rev = run(true);
    for (std::size_t i = 0; i < plain.first.size(); ++i)
      worst = std::max(worst, std::abs(rev.first[i] + lambda * plain.first[i]));
    disc_exact &= bit_equal(plain.second, rev.second);
  }
  v.require(forward_exact, "forward identity");
  v.require(worst <= 1e-12, "backward scaling");
  v.require(disc_exact, "discriminator gradient");

  // Inside the training step: discriminator gradients do not depend on lambda.
  const auto s = make_set(12, 7), tg = make_set(12, 8, -1.0);
  const Batch b{{0, 3, 5, 7}, {1, 2, 8, 11}};
  bool trainer_disc = true;
  for (Method m : {Method::kMiranda, Method::kDann, Method::kDanl}) {
    Trainer a(small(m), s, &tg), c(small(m), s, &tg);
    a.compute_gradients(b, 0.0);
    c.compute_gradients(b, 0.8);
    const auto pa = a.model().discriminator_parameters(), pc = c.model().discriminator_parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) trainer_disc &= bit_equal(pa[k]->grad, pc[k]->grad);
  }
  v.require(trainer_disc, "trainer discriminator gradients independent of lambda");
  v.detail << "200 graphs, worst |g_rev + lambda g| " << worst << "; forward bit-exact " << forward_exact
           << "; discriminator unreversed " << (disc_exact && trainer_disc);
}

// ---------------------------------------------------------------------------
// 3. Rank loss

double rank_oracle(const Tensor& f, const std::vector<double>& gd, double tau) {
  const std::size_t n = f.dim(0), d = f.dim(1);
  auto sim = [&](std::size_t a, std::size_t b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t t = 0; t < d; ++t) {
      dot += f.at(a, t) * f.at(b, t);
      na += f.at(a, t) * f.at(a, t);
      nb += f.at(b, t) * f.at(b, t);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb)) / tau;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double li = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double denom = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k != i && std::abs(gd[i] - gd[k]) >= std::abs(gd[i] - gd[j])) denom += std::exp(sim(i, k));
      }
      li += -std::log(std::exp(sim(i, j)) / denom);
    }
    total += li / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

double rank_loss(const Tensor& f, const std::vector<double>& gd, double tau = 0.1) {
  Graph g(false);
  return rank_n_contrast(g.constant(f), gd, {tau}).value().item();
}

void rank_oracle_equivalence(Verdict& v) {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> pick_n(2, 6), pick_d(1, 8);
  std::uniform_real_distribution<double> pick_tau(0.05, 2.0), cont(-50.0, 50.0), a(0.1, 10.0), b(-1e3, 1e3);
  double worst = 0.0, worst_affine = 0.0;
  bool two_zero = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = pick_n(rng);
    const Tensor f = random_tensor({n, pick_d(rng)}, rng);
    const auto years = random_years(n, rng);
    const double tau = t % 2 ? 0.1 : pick_tau(rng);
    const double loss = rank_loss(f, years, tau);
    worst = std::max(worst, std::abs(loss - rank_oracle(f, years, tau)));

    two_zero &= rank_loss(random_tensor({2, pick_d(rng)}, rng), random_years(2, rng), tau) == 0.0;

    const double aa = a(rng), bb = b(rng);
    std::vector<double> moved(n), gd(n), gd2(n);
    for (std::size_t i = 0; i < n; ++i) {
      moved[i] = aa * years[i] + bb;
      gd[i] = cont(rng);
      gd2[i] = -aa * gd[i] + bb;  // negative slopes preserve distances too
    }
    worst_affine = std::max(worst_affine, std::abs(rank_loss(f, moved, tau) - loss));
    worst_affine = std::max(worst_affine, std::abs(rank_loss(f, gd2, tau) - rank_loss(f, gd, tau)));
  }
  v.require(worst <= 1e-9, "oracle");
  v.require(two_zero, "N = 2 gives 0");
  v.require(worst_affine <= 1e-9, "affine guidance");
  v.detail << "1000 trials, worst |loss - oracle| " << worst << "; N=2 exact zero " << two_zero
           << "; worst affine drift " << worst_affine;
}

// ---------------------------------------------------------------------------
// 4. Hybrid layer norm

struct VecStats {
  double mean, sigma;
};

// Per-vector (mu, sqrt(var + eps)) of the last axis, plain loops.
std::vector<VecStats> vector_stats(const Tensor& x, double eps) {
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  std::vector<VecStats> out;
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += x[r * d + i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (x[r * d + i] - mu) * (x[r * d + i] - mu);
    out.push_back({mu, std::sqrt(var / static_cast<double>(d) + eps)});
  }
  return out;
}

void hybrid_layer_norm_contract(Verdict& v) {
  std::mt19937_64 rng(404);
  const double eps = 1e-5;
  std::uniform_int_distribution<std::size_t> pick(1, 6);
  std::uniform_real_distribution<double> mom(0.01, 1.0);

  double worst_ln = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + pick(rng);
    HybridLayerNorm n("n", d, true, 0.1, eps);
    n.gamma.value = random_tensor({d}, rng, 0.5, 2.0);
    n.beta.value = random_tensor({d}, rng);
    const Tensor x = random_tensor({pick(rng), pick(rng), d}, rng, -5.0, 5.0);
    Graph g;
    const Tensor y = n.forward(g, g.constant(x), NormMode::kSourceTrain).value();
    const auto st = vector_stats(x, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto& s = st[i / d];
      const double ref = n.gamma.value[i % d] * (x[i] - s.mean) / s.sigma + n.beta.value[i % d];
      worst_ln = std::max(worst_ln, std::abs(y[i] - ref));
    }
  }

  // mu_k = (1-m)^k mu_0 + sum_j m (1-m)^(k-j) mu(x_j), likewise sigma.
  double worst_rec = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double m = mom(rng);
    const std::size_t d = 4;
    HybridLayerNorm n("n", d, true, m, eps);
    std::vector<VecStats> batch;
    for (int k = 1; k <= 25; ++k) {
      const Tensor x = random_tensor({pick(rng), d}, rng, -3.0 + k * 0.1, 4.0);
      Graph g;
      n.forward(g, g.constant(x), NormMode::kSourceTrain);
      const auto st = vector_stats(x, eps);
      VecStats avg{0.0, 0.0};
      for (const auto& s : st) {
        avg.mean += s.mean / static_cast<double>(st.size());
        avg.sigma += s.sigma / static_cast<double>(st.size());
      }
      batch.push_back(avg);
      double mu = std::pow(1.0 - m, k) * 0.0, sigma = std::pow(1.0 - m, k) * 1.0;
      for (int j = 1; j <= k; ++j) {
        mu += m * std::pow(1.0 - m, k - j) * batch[j - 1].mean;
        sigma += m * std::pow(1.0 - m, k - j) * batch[j - 1].sigma;
      }
      worst_rec = std::max({worst_rec, std::abs(n.stats.mean - mu), std::abs(n.stats.sigma - sigma)});
    }
  }

  // Target evaluation: a fixed row normalizes identically in any batch and the
  // stored statistics stay untouched.
  bool composition_free = true, stats_frozen = true;
  double worst_target = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 5;
    HybridLayerNorm n("n", d, true, 0.1, eps);
    n.gamma.value = random_tensor({d}, rng, 0.5, 2.0);
    n.beta.value = random_tensor({d}, rng);
    n.stats = {random_tensor({1}, rng)[0], 0.5 + random_tensor({1}, rng, 0.0, 2.0)[0], true, 7};
    const RunningStats before = n.stats;
    const Tensor row = random_tensor({1, d}, rng);
    auto embed = [&](std::size_t rows, std::size_t at, double spread) {
      Tensor b = random_tensor({rows, d}, rng, -spread, spread);
      std::copy_n(row.ptr(), d, b.ptr() + at * d);
      return b;
    };
    Graph g;
    const Tensor a = n.forward(g, g.constant(embed(3, 0, 1.0)), NormMode::kTargetEval).value();
    const Tensor c = n.forward(g, g.constant(embed(9, 4, 50.0)), NormMode::kTargetEval).value();
    for (std::size_t i = 0; i < d; ++i) {
      composition_free &= a[i] == c[4 * d + i];
      const double ref = n.gamma.value[i] * (row[i] - before.mean) / before.sigma + n.beta.value[i];
      worst_target = std::max(worst_target, std::abs(a[i] - ref));
    }
    stats_frozen &= n.stats == before;
  }
  v.require(worst_ln <= 1e-12, "source-train equals LN");
  v.require(worst_rec <= 1e-12, "running-stat recurrence");
  v.require(composition_free && stats_frozen, "target-eval batch composition");
  v.require(worst_target <= 1e-12, "target-eval uses stored stats");
  v.detail << "LN worst " << worst_ln << "; recurrence worst " << worst_rec << "; target worst " << worst_target
           << ", composition-free " << composition_free << ", stats frozen " << stats_frozen;
}

// ---------------------------------------------------------------------------
// 5. Reduction chain

void reduction_chain(Verdict& v) {
  const auto s = make_set(24, 4), tgt = make_set(24, 5, 1.5);
  TrainConfig mc = small(Method::kMiranda);
  mc.hybrid_ln = false;
  Trainer mir(mc, s, &tgt);
  Trainer dann(small(Method::kDann), s, &tgt);
  Trainer van(small(Method::kVanilla), s, nullptr);
  std::mt19937_64 rng(505);
  double worst_loss = 0.0, worst_param = 0.0;
  for (int step = 0; step < 50; ++step) {
    std::vector<std::size_t> si(24), ti(24);
    std::iota(si.begin(), si.end(), 0);
    std::iota(ti.begin(), ti.end(), 0);
    std::shuffle(si.begin(), si.end(), rng);
    std::shuffle(ti.begin(), ti.end(), rng);
    si.resize(4);
    ti.resize(4);
    const double a = mir.step({si, ti}, 0.0).mse;
    const double d = dann.step({si, ti}, 0.0).mse;
    const double b = van.step({si, {}}, 0.0).mse;
    worst_loss = std::max({worst_loss, std::abs(a - b), std::abs(d - b)});
    const auto pv = van.model().backbone_parameters();
    for (Trainer* t : {&mir, &dann}) {
      const auto pm = t->model().backbone_parameters();
      if (pm.size() != pv.size()) {
        worst_param = INFINITY;
        continue;
      }
      for (std::size_t k = 0; k < pm.size(); ++k)
        worst_param = std::max(worst_param, max_abs_diff(pm[k]->value, pv[k]->value));
    }
  }
  v.require(worst_param <= 1e-12, "parameter trajectory");
  v.require(worst_loss <= 1e-12, "loss trajectory");
  v.detail << "50 steps, worst parameter gap " << worst_param << ", worst loss gap " << worst_loss;
}

// ---------------------------------------------------------------------------
// 6. Thermal time

std::optional<std::size_t> brute_gdd(const std::vector<double>& t, const SpeciesParams& p) {
  for (std::size_t d = p.start; d < t.size(); ++d) {
    double acc = 0.0;
    for (std::size_t u = p.start; u <= d; ++u) acc += t[u] > p.t_base ? t[u] - p.t_base : 0.0;
    if (acc >= p.forcing) return d;
  }
  return std::nullopt;
}

void thermal_time_oracle(Verdict& v) {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> temp(6.0, 8.0);
  std::uniform_real_distribution<double> base(0.0, 5.0), forcing(1.0, 1500.0);
  std::uniform_int_distribution<std::size_t> start(0, 200);
  std::size_t mismatches = 0, never = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> t(kDays);
    for (double& x : t) x = temp(rng);
    const SpeciesParams p{"x", base(rng), forcing(rng), start(rng), 0.0};
    const auto got = gdd_date(t, p);
    mismatches += got != brute_gdd(t, p);
    never += !got.has_value();
  }
  v.require(mismatches == 0, "gdd_date brute force");

  ClimateConfig cc;
  cc.sites = 8;
  cc.first_year = 1990;
  cc.last_year = 1999;
  cc.missing_rate = 0.0;
  const std::vector<SpeciesParams> planted{
      {"a", 0.0, 100.0, 100, 0.0}, {"b", 1.5, 150.0, 100, 0.0}, {"c", 2.5, 240.0, 100, 0.0},
      {"d", 4.0, 330.0, 100, 0.0}, {"e", 5.0, 400.0, 100, 0.0}};
  const auto recs = generate_dataset(cc, planted, 61);
  const ThermalFit fit = fit_thermal_time(recs, planted.size());
  std::size_t recovered = 0;
  for (std::size_t s = 0; s < planted.size(); ++s) {
    recovered += fit.params[s] && fit.params[s]->t_base == planted[s].t_base &&
                 fit.params[s]->forcing == planted[s].forcing;
  }
  v.require(recovered == planted.size(), "planted parameter recovery");
  v.detail << "10000 series, " << mismatches << " mismatches (" << never << " never reached); recovered "
           << recovered << "/" << planted.size() << " planted (t_base, F*) pairs";
}

// ---------------------------------------------------------------------------
// 7 and 8. End-to-end

TrainConfig e2e_train() {
  TrainConfig t;
  t.dim = 16;
  t.heads = 1;
  t.ffn_dim = 32;
  t.disc_dim = 32;
  t.rank_dim = 32;
  t.lr = 1e-3;
  t.batch_size = 16;
  return t;
}

double seed_mean_r2(const RunOutcome& r) {
  double s = 0.0;
  for (const auto& row : r.rows) s += row.m.r2 / static_cast<double>(r.rows.size());
  return s;
}

void stationary_sanity(Verdict& v) {
  ExperimentConfig c;
  c.climate.sites = 20;
  c.climate.first_year = 2000;
  c.climate.last_year = 2019;
  c.climate.warming = 0.0;
  c.data_seed = 1;
  c.split.kind = "random";
  c.split.seed = 7;
  c.methods = {Method::kVanilla};
  c.seeds = {0, 1, 2};
  c.train = e2e_train();
  c.train.max_epochs = 20;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentData data = prepare_experiment(c);
  const ExperimentResult res = run_experiment(c, data, 1, false);
  const double secs = seconds_since(t0);
  for (const auto& r : res.runs) {
    if (r.error) {
      v.require(false, "run " + run_name(r.method, r.seed) + " failed: " + *r.error);
      return;
    }
  }
  const Summary s = aggregate(res.rows);
  v.require(s.r2 >= 0.80, "mean test R2 >= 0.80");
  v.require(secs < 600.0, "runtime < 10 min");
  v.detail << "vanilla, random split, " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
           << " samples, " << c.train.max_epochs << " epochs, seeds";
  for (const auto& r : res.runs) v.detail << ' ' << r.seed << ":" << seed_mean_r2(r);
  v.detail << "; mean R2 " << s.r2 << "; " << secs << " s";
}

void shift_experiment(Verdict& v) {
  ExperimentConfig c;
  c.climate.sites = 16;
  c.climate.first_year = 2000;
  c.climate.last_year = 2014;
  c.data_seed = 1;
  c.split.kind = "elevation";
  c.methods = {Method::kVanilla, Method::kMiranda, Method::kDann};
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  c.train = e2e_train();
  c.train.max_epochs = 15;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentData data = prepare_experiment(c);
  const ExperimentResult res = run_experiment(c, data, std::max(1u, std::thread::hardware_concurrency()), false);
  const double secs = seconds_since(t0);

  std::printf("    elevation split: %zu train, %zu val, %zu test; %zu epochs; %.0f s\n", data.train.size(),
              data.val.size(), data.test.size(), c.train.max_epochs, secs);
  std::printf("    %-8s", "seed");
  for (Method m : c.methods) std::printf(" %10s", to_string(m));
  std::printf("\n");
  const std::size_t S = c.seeds.size();
  for (std::size_t k = 0; k < S; ++k) {
    std::printf("    %-8llu", static_cast<unsigned long long>(c.seeds[k]));
    for (std::size_t m = 0; m < c.methods.size(); ++m) {
      const RunOutcome& r = res.runs[m * S + k];
      if (r.error) {
        std::printf(" %10s", "failed");
      } else {
        std::printf(" %10.4f", seed_mean_r2(r));
      }
    }
    std::printf("\n");
  }
  std::map<Method, Summary> sum;
  for (std::size_t m = 0; m < c.methods.size(); ++m) {
    std::vector<MetricRow> rows;
    for (std::size_t k = 0; k < S; ++k) {
      const RunOutcome& r = res.runs[m * S + k];
      if (r.error) v.require(false, run_name(r.method, r.seed) + " failed");
      rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    }
    if (rows.empty()) return;
    sum[c.methods[m]] = aggregate(rows);
  }
  std::printf("    %-8s", "mean");
  for (Method m : c.methods) std::printf(" %10.4f", sum[m].r2);
  std::printf("\n    %-8s", "seed-std");
  for (Method m : c.methods) std::printf(" %10.4f", sum[m].r2_seed_std);
  std::printf("\n");
  const Summary &mir = sum[Method::kMiranda], &van = sum[Method::kVanilla], &dann = sum[Method::kDann];
  v.require(mir.r2 >= van.r2, "MIRANDA mean R2 >= vanilla mean R2");
  v.require(mir.r2_seed_std <= dann.r2_seed_std, "MIRANDA seed-std <= DANN seed-std");
  v.detail << "mean R2 miranda " << mir.r2 << " vs vanilla " << van.r2 << "; seed-std miranda " << mir.r2_seed_std
           << " vs dann " << dann.r2_seed_std;
}

// ---------------------------------------------------------------------------
// 9. Metrics

void metric_properties(Verdict& v) {
  const std::vector<double> truth{1.0, 2.0, 3.0}, flipped{3.0, 2.0, 1.0};
  const Metrics neg = metrics(truth, flipped);
  v.require(neg.r2 == -3.0, "R2 of reversed predictions is -3");

  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(60.0, 200.0), shift(-1e3, 1e3), err(-10.0, 10.0);
  double worst_translate = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + t % 30;
    std::vector<double> y(n), p(n), y2(n), p2(n);
    const double c = shift(rng);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = u(rng);
      p[i] = y[i] + err(rng);
      y2[i] = y[i] + c;
      p2[i] = p[i] + c;
    }
    if (y[0] == y[1] && n == 2) continue;
    const Metrics a = metrics(y, p), b = metrics(y2, p2);
    worst_translate = std::max({worst_translate, std::abs(a.rmse - b.rmse) / std::max(1.0, a.rmse),
                                std::abs(a.mae - b.mae) / std::max(1.0, a.mae)});
  }
  v.require(worst_translate <= 1e-12, "translation invariance");

  std::vector<MetricRow> rows;
  std::uniform_real_distribution<double> r2(-0.5, 1.0), e(1.0, 20.0);
  for (const char* m : {"vanilla", "miranda"})
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      for (const char* sp : {"a", "b", "c", "d", "e"}) rows.push_back({m, "elevation", sp, seed, {r2(rng), e(rng), e(rng), 50}});
  const fs::path dir = scratch("metrics");
  fs::create_directories(dir);
  write_cells_csv(rows, (dir / "cells.csv").string());
  const auto back = read_cells_csv((dir / "cells.csv").string());
  v.require(back == rows, "cells file round trip");
  double worst_agg = 0.0;
  for (const auto& [method, split, s] : aggregate_by_cell(back)) {
    double mean = 0.0, rmse = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      mean += r.m.r2;
      rmse += r.m.rmse;
      ++n;
    }
    worst_agg = std::max({worst_agg, std::abs(s.r2 - mean / n), std::abs(s.rmse - rmse / n)});
  }
  v.require(worst_agg <= 1e-12, "aggregate recomputation");
  v.require(format_report(back) == format_report(rows), "report recomputation");
  fs::remove_all(dir);
  v.detail << "R2 of reversed predictions " << neg.r2 << "; translation worst " << worst_translate
           << "; aggregate recomputation worst " << worst_agg;
}

// ---------------------------------------------------------------------------
// 10. Determinism

void determinism(Verdict& v) {
  ExperimentConfig c;
  c.climate.sites = 6;
  c.climate.first_year = 2000;
  c.climate.last_year = 2007;
  c.data_seed = 10;
  c.methods = {Method::kVanilla, Method::kMiranda, Method::kDann};
  c.seeds = {0, 1};
  c.train = e2e_train();
  c.train.dim = 8;
  c.train.ffn_dim = 16;
  c.train.max_epochs = 3;

  const fs::path d1 = scratch("det1"), d2 = scratch("det2");
  fs::create_directories(d1);
  fs::create_directories(d2);
  csv_write(load_dataset(c, 1).records, (d1 / "data.csv").string());
  csv_write(load_dataset(c, 3).records, (d2 / "data.csv").string());
  const std::string data1 = slurp(d1 / "data.csv");
  const std::size_t h1 = std::hash<std::string>{}(data1), h2 = std::hash<std::string>{}(slurp(d2 / "data.csv"));
  v.require(h1 == h2, "dataset hash");

  ExperimentConfig c1 = c, c2 = c;
  c1.out = (d1 / "run").string();
  c2.out = (d2 / "run").string();
  const ExperimentResult r1 = run_experiment(c1, prepare_experiment(c1), 1);
  const ExperimentResult r2 = run_experiment(c2, prepare_experiment(c2, 2), 2);
  bool curves = true, checkpoints = true;
  for (Method m : c.methods)
    for (std::uint64_t s : c.seeds) {
      const fs::path a = d1 / "run" / "runs" / run_name(m, s), b = d2 / "run" / "runs" / run_name(m, s);
      curves &= slurp(a / "metrics.csv") == slurp(b / "metrics.csv") && !slurp(a / "metrics.csv").empty();
      checkpoints &= slurp(a / "checkpoint.json") == slurp(b / "checkpoint.json");
    }
  v.require(curves, "loss curves");
  v.require(checkpoints, "checkpoints");
  v.require(r1.report == r2.report && slurp(d1 / "run" / "report.txt") == slurp(d2 / "run" / "report.txt"),
            "reports");

  // Round trip: load, compare every buffer bit for bit, save again.
  const fs::path ck = d1 / "run" / "runs" / run_name(Method::kMiranda, 1) / "checkpoint.json";
  PhenoFormer a = *r1.runs[c.seeds.size() + 1].model;
  PhenoFormer b = load_checkpoint(ck.string());
  bool exact = a.config() == b.config();
  const auto pa = a.parameters(), pb = b.parameters();
  exact &= pa.size() == pb.size();
  for (std::size_t k = 0; exact && k < pa.size(); ++k) exact &= bit_equal(pa[k]->value, pb[k]->value);
  exact &= a.t1.norm1.stats == b.t1.norm1.stats && a.t2.norm1.stats == b.t2.norm1.stats &&
           a.t2.norm2.stats == b.t2.norm2.stats;
  save_checkpoint(b, (d2 / "again.json").string());
  exact &= slurp(d2 / "again.json") == slurp(ck);
  v.require(exact, "checkpoint round trip");
  fs::remove_all(d1);
  fs::remove_all(d2);
  v.detail << "dataset hash " << std::hex << h1 << std::dec << " (" << data1.size() << " bytes) stable across jobs; "
           << r1.runs.size() << " runs with identical curves, checkpoints and reports; round trip bit-exact "
           << exact;
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient correctness", gradients},
      {2, "gradient reversal contract", gradient_reversal_contract},
      {3, "rank loss oracle equivalence", rank_oracle_equivalence},
      {4, "hybrid layer norm contract", hybrid_layer_norm_contract},
      {5, "reduction chain", reduction_chain},
      {6, "thermal-time oracle", thermal_time_oracle},
      {7, "stationary end-to-end sanity", stationary_sanity},
      {8, "elevation shift experiment", shift_experiment},
      {9, "metric properties", metric_properties},
      {10, "determinism and round trip", determinism},
  };
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!chosen.empty() && !chosen.count(c.id)) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failed += !v.pass;
    std::printf("%s %2d %s (%.1f s): %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, seconds_since(t0),
                v.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
