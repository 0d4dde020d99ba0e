#include "tmae/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "tmae/error.hpp"
#include "tmae/io.hpp"
#include "tmae/log.hpp"

namespace tmae {

void TrainConfig::validate() const {
  if (max_lr <= 0) throw UsageError("train: max_lr must be positive");
  if (epochs < 1 || steps_per_epoch < 1)
    throw UsageError("train: epochs and steps_per_epoch must be >= 1");
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (weight_decay < 0) throw UsageError("train: weight_decay must be >= 0");
  if (temporal_n < 3) throw UsageError("train: temporal_n must be >= 3");
  if (warmup_frac < 0 || warmup_frac >= 1)
    throw UsageError("train: warmup_frac must be in [0,1)");
  if (start_div < 1 || final_div < 1)
    throw UsageError("train: start_div/final_div must be >= 1");
  if (inference_gap < 1) throw UsageError("train: inference_gap must be >= 1");
}

double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr, double warmup_frac,
                    double start_div, double final_div) {
  if (total_steps < 1) throw UsageError("one_cycle_lr: total_steps must be >= 1");
  if (step < 0 || step >= total_steps)
    throw UsageError("one_cycle_lr: step " + std::to_string(step) + " outside [0," +
                     std::to_string(total_steps) + ")");
  if (total_steps == 1) return max_lr;
  int64_t warm = static_cast<int64_t>(std::floor(warmup_frac * static_cast<double>(total_steps)));
  double low = max_lr / start_div;
  double fin = max_lr / final_div;
  if (step < warm) {
    double t = static_cast<double>(step) / static_cast<double>(warm);
    return low + (max_lr - low) * 0.5 * (1.0 - std::cos(M_PI * t));
  }
  if (step == warm) return max_lr;
  if (step == total_steps - 1) return fin;
  double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - 1 - warm);
  return fin + (max_lr - fin) * 0.5 * (1.0 + std::cos(M_PI * t));
}

void adamw_step(ParamStore& store, double lr, const TrainConfig& cfg) {
  int64_t t = store.step + 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& s : store.slots()) {
    size_t n = s.t.impl->data.size();
    if (s.m.empty()) s.m.assign(n, 0.0);
    if (s.v.empty()) s.v.assign(n, 0.0);
    const std::vector<double>& gb = s.t.grad_buf();
    double* p = s.t.data();
    for (size_t i = 0; i < n; ++i) {
      double gi = gb.empty() ? 0.0 : gb[i];
      if (!std::isfinite(gi))
        throw NumericError("adamw: non-finite gradient in '" + s.name + "' at index " +
                           std::to_string(i));
      p[i] *= (1.0 - lr * cfg.weight_decay);
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * gi;
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  store.step = t;
}

std::pair<int64_t, int64_t> temporal_sample(int64_t n, Rng& rng) {
  if (n < 3) throw UsageError("temporal_sample: n must be >= 3");
  int64_t c1 = (n + 2) / 3;       // ceil(n/3)
  int64_t c2 = (2 * n + 2) / 3;   // ceil(2n/3)
  int64_t t1 = rng.uniform_int(c1);
  int64_t t2 = c2 + rng.uniform_int(n - c2);
  return {t1, t2};
}

namespace {
PointFrame augmented(const PointFrame& f, const AugParams& a) {
  PointFrame out;
  out.frame_index = f.frame_index;
  out.pose = f.pose;
  out.points = apply_aug(f.points, a);
  return out;
}

PointFrame concat_frames(const PointFrame& a, const PointFrame& b) {
  PointFrame out;
  out.frame_index = b.frame_index;
  out.pose = b.pose;
  out.points = a.points;
  out.points.insert(out.points.end(), b.points.begin(), b.points.end());
  return out;
}

void check_dataset(const Dataset& data, int64_t n) {
  if (data.sequences.empty()) throw DataError("dataset has no sequences");
  for (size_t s = 0; s < data.sequences.size(); ++s) {
    if (static_cast<int64_t>(data.sequences[s].size()) < n)
      throw DataError("sequence " + std::to_string(s) + " has " +
                      std::to_string(data.sequences[s].size()) +
                      " frames, need at least temporal_n=" + std::to_string(n));
  }
}
}  // namespace

TrainResult pretrain(const Dataset& data, const GridConfig& grid, const ModelConfig& model,
                     const TrainConfig& train, const std::string& config_echo,
                     const std::string& ckpt_path, const std::string& metrics_path,
                     const std::string& resume_from) {
  grid.validate();
  model.validate();
  train.validate();
  check_dataset(data, train.temporal_n);

  Rng rng(train.seed);
  ParamStore store = build_params(model, rng);
  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    apply_checkpoint(ck, store, rng);
    log_info("resumed from " + resume_from + " at step " + std::to_string(store.step));
  }

  int64_t total = train.epochs * train.steps_per_epoch;
  if (store.step >= total)
    throw UsageError("pretrain: checkpoint step " + std::to_string(store.step) +
                     " is not before total steps " + std::to_string(total));

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("cannot open metrics file '" + metrics_path + "'");
    metrics << "step,epoch,lr,loss\n";
  }

  int64_t n_seq = static_cast<int64_t>(data.sequences.size());
  TrainResult res;
  char row[160];
  while (store.step < total) {
    int64_t step = store.step;  // 0-based
    double lr = one_cycle_lr(step, total, train.max_lr, train.warmup_frac, train.start_div,
                             train.final_div);
    Tape tape;
    store.zero_grads();
    std::vector<Tensor> batch_losses;
    for (int64_t b = 0; b < train.batch_size; ++b) {
      int64_t s = rng.uniform_int(n_seq);
      const auto& seq = data.sequences[static_cast<size_t>(s)];
      int64_t len = static_cast<int64_t>(seq.size());
      int64_t start = rng.uniform_int(len - train.temporal_n + 1);
      auto [o_prev, o_cur] = temporal_sample(train.temporal_n, rng);
      const PointFrame& prev = seq[static_cast<size_t>(start + o_prev)];
      const PointFrame& cur = seq[static_cast<size_t>(start + o_cur)];
      PointFrame prev_aligned = transform_to_frame(prev, cur.pose);
      AugParams aug = sample_aug(rng, train.aug);
      PointFrame prev_a = augmented(prev_aligned, aug);
      PointFrame cur_a = augmented(cur, aug);
      Tensor l = train.baseline_concat
                     ? forward_single(tape, concat_frames(prev_a, cur_a), store, model, grid, rng)
                     : forward_tmae(tape, prev_a, cur_a, store, model, grid, rng);
      batch_losses.push_back(l);
    }
    Tensor loss = batch_losses[0];
    for (size_t b = 1; b < batch_losses.size(); ++b) loss = add(tape, loss, batch_losses[b]);
    if (train.batch_size > 1)
      loss = scale(tape, loss, 1.0 / static_cast<double>(train.batch_size));
    double lv = loss.data()[0];
    if (!std::isfinite(lv))
      throw NumericError("pretrain: non-finite loss at step " + std::to_string(step + 1) +
                         " (lr=" + std::to_string(lr) + ")");
    tape.backward(loss);
    adamw_step(store, lr, train);

    res.losses.push_back(lv);
    int64_t epoch = step / train.steps_per_epoch + 1;
    std::snprintf(row, sizeof(row), "%lld,%lld,%.9g,%.9g", static_cast<long long>(step + 1),
                  static_cast<long long>(epoch), lr, lv);
    if (metrics.is_open()) metrics << row << "\n";
    log_debug(std::string("step ") + row);

    if (store.step % train.steps_per_epoch == 0 && !ckpt_path.empty()) {
      save_checkpoint(ckpt_path, store, config_echo, rng);
      int64_t epoch_done = store.step / train.steps_per_epoch;
      // boundary snapshots before the last epoch stay around so an
      // interrupted run can resume from any completed epoch
      if (epoch_done < train.epochs)
        save_checkpoint(ckpt_path + ".e" + std::to_string(epoch_done), store, config_echo, rng);
      log_info("checkpoint at step " + std::to_string(store.step) + " -> " + ckpt_path);
    }
  }
  if (metrics.is_open()) metrics.close();
  res.steps_run = static_cast<int64_t>(res.losses.size());
  res.final_loss = res.losses.empty() ? 0.0 : res.losses.back();
  return res;
}

EvalStats eval_recon(ParamStore& params, const GridConfig& grid, const ModelConfig& model,
                     const Dataset& data, GapSpec gap, bool shuffled_prev, uint64_t eval_seed) {
  if (data.sequences.empty()) throw DataError("dataset has no sequences");
  if (!gap.random && (gap.gap < 1 || gap.gap > 5))
    throw UsageError("eval_recon: gap must be in 1..5 or random");
  EvalStats st;
  int64_t n_seq = static_cast<int64_t>(data.sequences.size());
  for (int64_t s = 0; s < n_seq; ++s) {
    const auto& seq = data.sequences[static_cast<size_t>(s)];
    for (int64_t cur_idx = 1; cur_idx < static_cast<int64_t>(seq.size()); ++cur_idx) {
      uint64_t salt = static_cast<uint64_t>(s) * 100000ull + static_cast<uint64_t>(cur_idx);
      // gap draw is independent of the mask stream so every gap setting
      // evaluates identical masks
      int64_t g = gap.gap;
      if (gap.random) {
        Rng grng(mix_seed(eval_seed ^ 0x9e3779b9ull, salt));
        g = 1 + grng.uniform_int(5);
      }
      int64_t prev_idx = std::max<int64_t>(0, cur_idx - g);
      const PointFrame& cur = seq[static_cast<size_t>(cur_idx)];
      const PointFrame* prev = &seq[static_cast<size_t>(prev_idx)];
      if (shuffled_prev) {
        const auto& other = data.sequences[static_cast<size_t>((s + 1) % n_seq)];
        int64_t pi = std::min<int64_t>(prev_idx, static_cast<int64_t>(other.size()) - 1);
        prev = &other[static_cast<size_t>(pi)];
      }
      PointFrame prev_aligned = transform_to_frame(*prev, cur.pose);
      Rng frng(mix_seed(eval_seed, salt));
      Tape tape;
      Tensor loss = forward_tmae(tape, prev_aligned, cur, params, model, grid, frng);
      st.per_frame.push_back(loss.data()[0]);
    }
  }
  st.frames = static_cast<int64_t>(st.per_frame.size());
  if (st.frames == 0) throw DataError("eval_recon: no evaluable frames (sequences too short)");
  double sum = 0.0;
  for (double v : st.per_frame) sum += v;
  st.mean = sum / static_cast<double>(st.frames);
  double ss = 0.0;
  for (double v : st.per_frame) ss += (v - st.mean) * (v - st.mean);
  st.stddev = st.frames > 1 ? std::sqrt(ss / static_cast<double>(st.frames - 1)) : 0.0;
  return st;
}

int64_t dump_attention(ParamStore& params, const GridConfig& grid, const ModelConfig& model,
                       const PointFrame& prev_aligned, const PointFrame& cur, std::ostream& out,
                       const double* filter_box) {
  PillarSet prev_p = assign_pillars(prev_aligned, grid);
  PillarSet cur_p = assign_pillars(cur, grid);
  if (prev_p.count() == 0 || cur_p.count() == 0)
    throw DataError("dump_attention: a frame has no points inside the grid");

  Tape tape;
  Tensor tok_prev = embed_pillars(tape, prev_aligned, prev_p, params, grid, model);
  Tensor tok_cur = embed_pillars(tape, cur, cur_p, params, grid, model);
  Tensor enc_prev = encode_frame(tape, tok_prev, prev_p.coords, params, model);
  Tensor enc_cur = encode_frame(tape, tok_cur, cur_p.coords, params, model);
  std::vector<WindowScores> dump;
  (void)wca(tape, enc_cur, cur_p.coords, enc_prev, prev_p.coords, params, model, &dump);

  out << "cur_ix,cur_iy,prev_ix,prev_iy,score\n";
  char row[128];
  int64_t rows = 0;
  for (const auto& w : dump) {
    for (size_t qi = 0; qi < w.cur_rows.size(); ++qi) {
      auto [cix, ciy] = cur_p.coords[static_cast<size_t>(w.cur_rows[qi])];
      if (filter_box) {
        double cx = grid.range_min[0] + (cix + 0.5) * grid.pillar_size[0];
        double cy = grid.range_min[1] + (ciy + 0.5) * grid.pillar_size[1];
        if (cx < filter_box[0] || cy < filter_box[1] || cx > filter_box[2] ||
            cy > filter_box[3])
          continue;
      }
      for (size_t kj = 0; kj < w.prev_rows.size(); ++kj) {
        auto [pix, piy] = prev_p.coords[static_cast<size_t>(w.prev_rows[kj])];
        std::snprintf(row, sizeof(row), "%d,%d,%d,%d,%.9g\n", cix, ciy, pix, piy,
                      w.scores[qi * w.prev_rows.size() + kj]);
        out << row;
        ++rows;
      }
    }
  }
  return rows;
}

}  // namespace tmae
