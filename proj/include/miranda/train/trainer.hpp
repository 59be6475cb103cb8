#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "miranda/core/adam.hpp"
#include "miranda/data/synthdata.hpp"
#include "miranda/eval/metrics.hpp"
#include "miranda/losses/losses.hpp"
#include "miranda/model/phenoformer.hpp"
#include "miranda/train/batching.hpp"
#include "miranda/train/config.hpp"

namespace miranda {

/// Model-ready view of a set of records.
struct PreparedSet {
  Tensor x;                       // (N, T, C) raw inputs
  Tensor y;                       // (N, S) dates; NaN = missing
  std::vector<double> guidance;   // one scalar per sample
  std::vector<std::size_t> rows;  // record index of each sample

  std::size_t size() const { return rows.size(); }
  std::size_t seq_len() const { return x.dim(1); }
  std::size_t channels() const { return x.dim(2); }
  std::size_t species() const { return y.dim(1); }
};

inline double guidance_value(const SampleRecord& r, Guidance g) {
  switch (g) {
    case Guidance::kYear: return static_cast<double>(r.year);
    case Guidance::kAnnualTemperature: return r.mean_temperature();
    case Guidance::kElevation: return r.elevation;
  }
  return 0.0;
}

inline PreparedSet prepare(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& idx,
                           Guidance guidance) {
  if (idx.empty()) throw Error("prepare: empty index set");
  const std::size_t C = records.at(idx[0]).x.dim(0), T = records[idx[0]].x.dim(1);
  const std::size_t S = records[idx[0]].labels.size();
  PreparedSet p;
  p.x = Tensor({idx.size(), T, C});
  p.y = Tensor({idx.size(), S}, NAN);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const SampleRecord& r = records.at(idx[n]);
    if (r.x.dim(0) != C || r.x.dim(1) != T || r.labels.size() != S) {
      throw Error("prepare: record " + std::to_string(idx[n]) + " has a different shape");
    }
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) p.x[(n * T + t) * C + c] = r.x[c * T + t];
    for (std::size_t s = 0; s < S; ++s)
      if (r.labels[s]) p.y[n * S + s] = *r.labels[s];
    p.guidance.push_back(guidance_value(r, guidance));
    p.rows.push_back(idx[n]);
  }
  return p;
}

/// Samples [i for i in keep] of `set`.
inline PreparedSet subset(const PreparedSet& set, const std::vector<std::size_t>& keep) {
  if (keep.empty()) throw Error("subset: empty selection");
  const std::size_t T = set.seq_len(), C = set.channels(), S = set.species();
  PreparedSet p;
  p.x = Tensor({keep.size(), T, C});
  p.y = Tensor({keep.size(), S});
  for (std::size_t n = 0; n < keep.size(); ++n) {
    const std::size_t i = keep[n];
    if (i >= set.size()) throw Error("subset: index out of range");
    std::copy_n(set.x.ptr() + i * T * C, T * C, p.x.ptr() + n * T * C);
    std::copy_n(set.y.ptr() + i * S, S, p.y.ptr() + n * S);
    p.guidance.push_back(set.guidance[i]);
    p.rows.push_back(set.rows[i]);
  }
  return p;
}

/// Samples with at least one label.
inline std::vector<std::size_t> labeled_samples(const PreparedSet& set) {
  std::vector<std::size_t> out;
  const std::size_t S = set.species();
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t s = 0; s < S; ++s)
      if (!std::isnan(set.y[i * S + s])) {
        out.push_back(i);
        break;
      }
  return out;
}

/// Per-channel input and per-species label standardization fitted on `train`.
inline void fit_standardization(PhenoFormer& model, const PreparedSet& train) {
  const std::size_t N = train.size(), T = train.seq_len(), C = train.channels(), S = train.species();
  Standardization in{std::vector<double>(C, 0.0), std::vector<double>(C, 1.0)};
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < N * T; ++i) sum += train.x[i * C + c];
    const double n = static_cast<double>(N * T);
    const double m = sum / n;
    for (std::size_t i = 0; i < N * T; ++i) sq += (train.x[i * C + c] - m) * (train.x[i * C + c] - m);
    const double sd = std::sqrt(sq / n);
    in.mean[c] = m;
    in.scale[c] = sd > 1e-12 ? sd : 1.0;
  }
  Standardization out{std::vector<double>(S, 0.0), std::vector<double>(S, 1.0)};
  for (std::size_t s = 0; s < S; ++s) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double y = train.y[i * S + s];
      if (std::isnan(y)) continue;
      sum += y;
      ++n;
    }
    if (n == 0) continue;
    const double m = sum / static_cast<double>(n);
    for (std::size_t i = 0; i < N; ++i) {
      const double y = train.y[i * S + s];
      if (!std::isnan(y)) sq += (y - m) * (y - m);
    }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    out.mean[s] = m;
    out.scale[s] = sd > 1e-12 ? sd : 1.0;
  }
  model.input_norm = std::move(in);
  model.label_norm = std::move(out);
}

/// Replaces the pre-decoder batch-norm statistics with population statistics
/// of `raw` (B, T, C). No learnable parameter changes.
inline void adapt_batchnorm(PhenoFormer& model, const Tensor& raw, std::size_t chunk = 32) {
  if (!model.config().batchnorm_before_decoder) throw Error("adapt_batchnorm: model has no batch norm");
  const std::size_t B = raw.dim(0), T = model.config().seq_len, C = model.config().channels;
  model.batch_norm.begin_population();
  for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
    const std::size_t nb = std::min(chunk, B - b0);
    Tensor x({nb, T, C});
    for (std::size_t i = 0; i < nb * T * C; ++i) x[i] = model.input_norm.forward(i % C, raw[b0 * T * C + i]);
    Graph g(false);
    MidFeatures mid = model.forward_t1(g, model.encode(g, g.constant(std::move(x))), NormMode::kSourceEval);
    model.batch_norm.accumulate_population(model.forward_t2(g, mid.h, mid.z, NormMode::kSourceEval).value());
  }
  model.batch_norm.end_population();
}

struct StepLosses {
  double mse = 0.0;
  double adv = 0.0;    // adversarial or alignment term, 0 without adaptation
  double total = 0.0;  // mse + lambda * adv
  double lambda = 0.0;
};

namespace detail {

inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  Shape s = t.shape();
  const std::size_t row = t.size() / s[0];
  s[0] = idx.size();
  Tensor out(s);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    if (idx[n] >= t.dim(0)) throw Error("gather_rows: index out of range");
    std::copy_n(t.ptr() + idx[n] * row, row, out.ptr() + n * row);
  }
  return out;
}

inline std::vector<double> gather(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v.at(i));
  return out;
}

}  // namespace detail

/// One model and its optimizer, bound to a labeled source set and an
/// unlabeled target pool. Target labels are never read.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const PreparedSet& source, const PreparedSet* target)
      : cfg_(cfg),
        model_(std::make_unique<PhenoFormer>(cfg.model_config(source.channels(), source.seq_len(), source.species()),
                                             cfg.seed)) {
    cfg.validate();
    if (cfg.method == Method::kThermalTime) throw Error("Trainer: thermal-time is not a neural method");
    if (cfg.adapts() && target == nullptr) throw Error("Trainer: adaptation needs a target pool");
    fit_standardization(*model_, source);
    xs_ = standardize_inputs(source.x);
    ys_ = Tensor(source.y.shape());
    const std::size_t S = source.species();
    for (std::size_t i = 0; i < ys_.size(); ++i) {
      const double y = source.y[i];
      ys_[i] = std::isnan(y) ? NAN : model_->label_norm.forward(i % S, y);
    }
    gs_ = source.guidance;
    if (target != nullptr) {
      if (target->channels() != source.channels() || target->seq_len() != source.seq_len()) {
        throw Error("Trainer: source and target inputs differ in shape");
      }
      xt_ = standardize_inputs(target->x);
      gt_ = target->guidance;
    }
    opt_ = std::make_unique<Adam>(model_->parameters(), cfg.lr);
  }

  PhenoFormer& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t source_size() const { return xs_.dim(0); }
  std::size_t target_size() const { return xt_.empty() ? 0 : xt_.dim(0); }
  std::size_t steps() const { return opt_->steps(); }

  /// Fills Parameter::grad for every model parameter from one batch.
  StepLosses compute_gradients(const Batch& batch, double lambda) {
    if (batch.source.empty()) throw Error("Trainer: empty source half");
    PhenoFormer& m = *model_;
    for (Parameter* p : m.parameters()) p->zero_grad();
    Graph g;
    Var xs = g.constant(detail::gather_rows(xs_, batch.source));
    MidFeatures ms = m.forward_t1(g, m.encode(g, xs), NormMode::kSourceTrain);
    Var gs = m.forward_t2(g, ms.h, ms.z, NormMode::kSourceTrain);
    Var l_mse = mse(m.decode(g, gs, NormMode::kSourceTrain), detail::gather_rows(ys_, batch.source));

    StepLosses out;
    out.lambda = lambda;
    out.mse = l_mse.value()[0];
    Var objective = l_mse;
    const Adversary adv = cfg_.adversary_kind();
    if (adv != Adversary::kNone) {
      if (batch.target.empty()) throw Error("Trainer: adaptation batch has no target half");
      // Target half after the source half: hybrid layers read the statistics
      // this step's source pass just wrote.
      Var xt = g.constant(detail::gather_rows(xt_, batch.target));
      MidFeatures mt = m.forward_t1(g, m.encode(g, xt), NormMode::kTargetEval);
      const bool mid = cfg_.site() == FeatureSite::kMid;
      Var fs = mid ? ms.z : gs;
      Var ft = mid ? mt.z : m.forward_t2(g, mt.h, mt.z, NormMode::kTargetEval);
      Var l_adv;
      switch (adv) {
        case Adversary::kRank: {
          const RankLossConfig rc{cfg_.tau, cfg_.guidance};
          Var es = m.discriminate(g, gradient_reversal(fs, lambda));
          Var et = m.discriminate(g, gradient_reversal(ft, lambda));
          l_adv = rank_n_contrast(es, detail::gather(gs_, batch.source), rc) +
                  rank_n_contrast(et, detail::gather(gt_, batch.target), rc);
          objective = l_mse + l_adv;
          break;
        }
        case Adversary::kBinary: {
          Var logits = m.discriminate(g, gradient_reversal(concat({fs, ft}, 0), lambda));
          std::vector<int> domains(batch.source.size(), 0);
          domains.resize(batch.source.size() + batch.target.size(), 1);
          l_adv = binary_domain_loss(logits, domains);
          objective = l_mse + l_adv;
          break;
        }
        case Adversary::kCoral: {
          const std::size_t F = m.config().species * m.config().dim;
          l_adv = coral(reshape(fs, {fs.dim(0), F}), reshape(ft, {ft.dim(0), F}));
          objective = l_mse + lambda * l_adv;
          break;
        }
        case Adversary::kNone: break;
      }
      out.adv = l_adv.value()[0];
    }
    out.total = out.mse + lambda * out.adv;
    if (!std::isfinite(out.total)) {
      std::ostringstream os;
      os << "Trainer: non-finite loss at step " << opt_->steps() << " (mse " << out.mse << ", adv " << out.adv
         << ", lambda " << lambda << ")";
      throw Error(os.str());
    }
    g.backward(objective);
    return out;
  }

  StepLosses step(const Batch& batch, double lambda) {
    StepLosses l = compute_gradients(batch, lambda);
    opt_->step();
    return l;
  }

 private:
  Tensor standardize_inputs(const Tensor& raw) const {
    Tensor out(raw.shape());
    const std::size_t C = raw.dim(2);
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = model_->input_norm.forward(i % C, raw[i]);
    return out;
  }

  TrainConfig cfg_;
  std::unique_ptr<PhenoFormer> model_;  // stable address for the optimizer
  std::unique_ptr<Adam> opt_;
  Tensor xs_, ys_, xt_;
  std::vector<double> gs_, gt_;
};

/// Mode used for predictions on target data.
inline NormMode target_mode() { return NormMode::kTargetEval; }

/// Target predictions in date units. AdaBN models are evaluated on a copy
/// whose batch norm is re-estimated on `adapt_pool`.
inline Tensor predict_target(const PhenoFormer& model, const Tensor& raw, const Tensor* adapt_pool) {
  PhenoFormer m = model;
  if (m.config().batchnorm_before_decoder && adapt_pool != nullptr) adapt_batchnorm(m, *adapt_pool);
  return m.predict(raw, target_mode());
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double train_adv = 0.0;
  double lambda = 0.0;    // at the last step of the epoch
  double val_rmse = 0.0;  // mean over species, date units
};

struct RunResult {
  PhenoFormer model;  // weights from the selected epoch
  std::vector<EpochRecord> curve;
  std::size_t selected_epoch = 0;
  std::size_t epochs_trained = 0;
  std::size_t source_samples = 0;
  std::size_t dropped_unlabeled = 0;
  double wall_seconds = 0.0;
};

/// Trains on `train`, adapting towards `target_pool` when the method does, and
/// keeps the epoch with the lowest validation RMSE (first one on ties). With
/// target-val selection `val` is scored in target mode; with source-holdout a
/// slice of `train` is held out and scored in source mode, and `val` is unused.
inline RunResult fit(const TrainConfig& cfg, const PreparedSet& train, const PreparedSet& val,
                     const PreparedSet& target_pool,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const auto labeled = labeled_samples(train);
  if (labeled.size() < 2) throw Error("fit: fewer than 2 labeled source samples");
  PreparedSet source = subset(train, labeled);
  const std::size_t dropped = train.size() - labeled.size();

  PreparedSet holdout;
  const PreparedSet* val_set = &val;
  NormMode val_mode = NormMode::kTargetEval;
  if (cfg.selection == Selection::kSourceHoldout) {
    std::vector<std::size_t> order(source.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(detail::derive_seed(cfg.seed, 11));
    std::shuffle(order.begin(), order.end(), rng);
    const auto nh = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::llround(cfg.holdout_frac * static_cast<double>(order.size()))));
    if (nh + 2 > order.size()) throw Error("fit: source set too small for a holdout");
    std::vector<std::size_t> ho(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nh));
    std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(nh), order.end());
    std::sort(ho.begin(), ho.end());
    std::sort(tr.begin(), tr.end());
    holdout = subset(source, ho);
    source = subset(source, tr);
    val_set = &holdout;
    val_mode = NormMode::kSourceEval;
  }

  Trainer trainer(cfg, source, cfg.adapts() ? &target_pool : nullptr);
  const std::uint64_t batch_seed = detail::derive_seed(cfg.seed, 12);
  std::optional<BalancedBatcher> balanced;
  std::optional<SourceBatcher> plain;
  std::size_t per_epoch = 0;
  if (cfg.adapts()) {
    balanced.emplace(source.size(), target_pool.size(), cfg.batch_size, batch_seed);
    per_epoch = balanced->batches_per_epoch();
  } else {
    plain.emplace(source.size(), cfg.batch_size, batch_seed);
    per_epoch = plain->batches_per_epoch();
  }
  const double total_steps = static_cast<double>(per_epoch * cfg.max_epochs);
  const bool adabn = cfg.method == Method::kAdaBn;

  RunResult result{trainer.model(), {}, 0, 0, source.size(), dropped, 0.0};
  double best = INFINITY;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = balanced ? balanced->epoch() : plain->epoch();
    EpochRecord rec;
    rec.epoch = epoch;
    for (const Batch& b : batches) {
      double lambda = 0.0;
      if (cfg.adapts()) {
        lambda = cfg.fixed_lambda ? *cfg.fixed_lambda
                                  : lambda_schedule(static_cast<double>(trainer.steps()) / total_steps, cfg.steepness);
      }
      const StepLosses l = trainer.step(b, lambda);
      rec.train_mse += l.mse;
      rec.train_adv += l.adv;
      rec.lambda = lambda;
    }
    rec.train_mse /= static_cast<double>(batches.size());
    rec.train_adv /= static_cast<double>(batches.size());

    Tensor pred;
    if (adabn && val_mode == NormMode::kTargetEval) {
      pred = predict_target(trainer.model(), val_set->x, &target_pool.x);
    } else {
      pred = trainer.model().predict(val_set->x, val_mode);
    }
    rec.val_rmse = mean_species_rmse(val_set->y, pred);
    result.curve.push_back(rec);
    result.epochs_trained = epoch;
    if (on_epoch) on_epoch(rec);

    if (rec.val_rmse < best) {
      best = rec.val_rmse;
      result.model = trainer.model();
      result.selected_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (result.selected_epoch == 0) throw Error("fit: validation RMSE was never finite");
  if (adabn) adapt_batchnorm(result.model, target_pool.x);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace miranda
