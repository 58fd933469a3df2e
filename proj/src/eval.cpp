#include "melsynth/eval.hpp"

#include "melsynth/audio_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>

namespace melsynth {

namespace fs = std::filesystem;
using nlohmann::json;

MelStatsEmbedder::MelStatsEmbedder(const SpecConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  block_frames_ = static_cast<int>(std::llround(1.0 / cfg_.frame_seconds()));
}

int MelStatsEmbedder::dim() const { return 3 * cfg_.mel_bins; }

double MelStatsEmbedder::frame_rate() const { return 1.0; }

MatF MelStatsEmbedder::embed(std::span<const float> audio) const {
  if (audio.empty()) throw ValueError("embed: empty audio");
  MelSpec mel = compute_mel(audio, cfg_);
  const int blocks = mel.frames() / block_frames_;
  if (blocks == 0) throw ValueError("embed: audio shorter than one embedding block (1 s)");
  MatF out(blocks, dim());
  const int bins = cfg_.mel_bins;
  for (int b = 0; b < blocks; ++b) {
    const auto block = mel.values.middleRows(b * block_frames_, block_frames_);
    for (int c = 0; c < bins; ++c) {
      const auto col = block.col(c);
      const float mean = col.mean();
      const float var = (col.array() - mean).square().mean();
      float delta = 0.0f;
      for (int r = 1; r < block_frames_; ++r) delta += std::abs(col(r) - col(r - 1));
      delta /= static_cast<float>(block_frames_ - 1);
      out(b, c) = mean;
      out(b, bins + c) = std::sqrt(var);
      out(b, 2 * bins + c) = delta;
    }
  }
  return out;
}

std::unique_ptr<Embedder> make_embedder(const std::string& name, const SpecConfig& cfg) {
  if (name == "melstats") return std::make_unique<MelStatsEmbedder>(cfg);
  throw ValueError("unknown embedder: " + name +
                   " (built-in: melstats; external embedders implement the Embedder interface)");
}

double recon_distance(const MatF& e_ref, const MatF& e_test, Warnings* warnings) {
  if (e_ref.cols() != e_test.cols())
    throw ValueError("recon_distance: embedding dimension mismatch");
  Eigen::Index frames = std::min(e_ref.rows(), e_test.rows());
  if (frames == 0) throw ValueError("recon_distance: empty embeddings");
  if (e_ref.rows() != e_test.rows())
    warn(warnings, "recon_distance: frame counts differ (" + std::to_string(e_ref.rows()) +
                       " vs " + std::to_string(e_test.rows()) + "), truncating");
  double sum = 0.0;
  for (Eigen::Index r = 0; r < frames; ++r)
    sum += (e_ref.row(r) - e_test.row(r)).cast<double>().norm();
  return sum / static_cast<double>(frames);
}

namespace {

// Symmetric PSD square root via eigendecomposition.
MatD psd_sqrt(const MatD& m) {
  Eigen::SelfAdjointEigenSolver<MatD> es(m);
  if (es.info() != Eigen::Success) throw Error("fad: eigendecomposition failed");
  Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

struct Gaussian {
  Eigen::VectorXd mean;
  MatD cov;
};

Gaussian fit_gaussian(const MatF& embeds) {
  const auto n = embeds.rows();
  const auto d = embeds.cols();
  Gaussian g;
  g.mean = embeds.cast<double>().colwise().mean().transpose();
  MatD centered = embeds.cast<double>();
  centered.rowwise() -= g.mean.transpose();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  g.cov = centered.transpose() * centered / denom;
  (void)d;
  return g;
}

}  // namespace

double fad(const MatF& embeds_ref, const MatF& embeds_test, double reg, Warnings* warnings) {
  if (embeds_ref.cols() != embeds_test.cols())
    throw ValueError("fad: embedding dimension mismatch");
  if (embeds_ref.rows() < 1 || embeds_test.rows() < 1) throw ValueError("fad: empty embeddings");
  const auto d = embeds_ref.cols();
  if (embeds_ref.rows() <= d || embeds_test.rows() <= d)
    warn(warnings, "fad: fewer frames than dimensions, covariance regularized");

  Gaussian a = fit_gaussian(embeds_ref);
  Gaussian b = fit_gaussian(embeds_test);
  a.cov.diagonal().array() += reg;
  b.cov.diagonal().array() += reg;

  // Tr((S1 S2)^(1/2)) computed symmetrically as Tr((S1^(1/2) S2 S1^(1/2))^(1/2)).
  MatD sqrt_a = psd_sqrt(a.cov);
  MatD inner = sqrt_a * b.cov * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<MatD> es(inner);
  if (es.info() != Eigen::Success) throw Error("fad: eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

namespace {

bool pitched_match(const TimedNote& ref, const TimedNote& est, const F1Options& o) {
  if (ref.is_drum != est.is_drum) return false;
  if (ref.pitch != est.pitch) return false;
  if (std::abs(ref.onset_s - est.onset_s) > o.onset_tolerance_s) return false;
  if (ref.is_drum) return true;  // drums: onset + identity only
  if (ref.program != est.program) return false;
  if (!ref.offset_s || !est.offset_s) return false;
  const double ref_dur = *ref.offset_s - ref.onset_s;
  const double tol = std::max(o.offset_ratio * ref_dur, o.offset_min_tolerance_s);
  return std::abs(*ref.offset_s - *est.offset_s) <= tol;
}

// Kuhn's augmenting-path maximum bipartite matching.
int max_bipartite(const std::vector<std::vector<int>>& adj, int n_right) {
  std::vector<int> match_right(static_cast<size_t>(n_right), -1);
  int matches = 0;
  std::vector<char> used;
  std::function<bool(int)> try_match = [&](int left) {
    for (int r : adj[static_cast<size_t>(left)]) {
      if (used[static_cast<size_t>(r)]) continue;
      used[static_cast<size_t>(r)] = 1;
      if (match_right[static_cast<size_t>(r)] < 0 || try_match(match_right[static_cast<size_t>(r)])) {
        match_right[static_cast<size_t>(r)] = left;
        return true;
      }
    }
    return false;
  };
  for (size_t l = 0; l < adj.size(); ++l) {
    used.assign(static_cast<size_t>(n_right), 0);
    if (try_match(static_cast<int>(l))) ++matches;
  }
  return matches;
}

}  // namespace

F1Result note_f1(std::span<const TimedNote> ref, std::span<const TimedNote> est,
                 const F1Options& opts) {
  F1Result out;
  if (ref.empty() && est.empty()) return out;  // zero by convention

  std::vector<int> ref_order(ref.size()), est_order(est.size());
  std::iota(ref_order.begin(), ref_order.end(), 0);
  std::iota(est_order.begin(), est_order.end(), 0);
  auto by_onset = [](std::span<const TimedNote> notes) {
    return [notes](int a, int b) {
      if (notes[static_cast<size_t>(a)].onset_s != notes[static_cast<size_t>(b)].onset_s)
        return notes[static_cast<size_t>(a)].onset_s < notes[static_cast<size_t>(b)].onset_s;
      return a < b;
    };
  };
  std::sort(ref_order.begin(), ref_order.end(), by_onset(ref));
  std::sort(est_order.begin(), est_order.end(), by_onset(est));

  int matches = 0;
  if (opts.optimal_matching) {
    std::vector<std::vector<int>> adj(est.size());
    for (size_t e = 0; e < est.size(); ++e)
      for (size_t r = 0; r < ref.size(); ++r)
        if (pitched_match(ref[r], est[e], opts)) adj[e].push_back(static_cast<int>(r));
    matches = max_bipartite(adj, static_cast<int>(ref.size()));
  } else {
    // Greedy in onset order: each estimated note takes the earliest
    // still-unmatched feasible reference note.
    std::vector<char> ref_used(ref.size(), 0);
    for (int e : est_order) {
      for (int r : ref_order) {
        if (ref_used[static_cast<size_t>(r)]) continue;
        if (pitched_match(ref[static_cast<size_t>(r)], est[static_cast<size_t>(e)], opts)) {
          ref_used[static_cast<size_t>(r)] = 1;
          ++matches;
          break;
        }
      }
    }
  }

  out.matches = matches;
  out.precision = est.empty() ? 0.0 : static_cast<double>(matches) / static_cast<double>(est.size());
  out.recall = ref.empty() ? 0.0 : static_cast<double>(matches) / static_cast<double>(ref.size());
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

std::span<const float> truncate_audio(std::span<const float> audio, double max_s,
                                      int sample_rate) {
  const auto max_samples = static_cast<size_t>(max_s * sample_rate);
  return audio.size() > max_samples ? audio.subspan(0, max_samples) : audio;
}

std::vector<TimedNote> ExternalTranscriber::transcribe(const std::string& wav_path,
                                                       const std::string& scratch_dir) const {
  fs::path out_path = fs::path(scratch_dir) /
                      ("transcribe_" + std::to_string(fnv1a64(wav_path) & 0xffffff) + ".json");
  const std::string cmd = command + " '" + wav_path + "' '" + out_path.string() + "'";
  const int rc = std::system(cmd.c_str());
  if (rc != 0)
    throw Error("transcriber command failed (exit " + std::to_string(rc) + "): " + cmd);
  auto notes = load_notes_json(out_path.string());
  fs::remove(out_path);
  return notes;
}

MetricsReport evaluate_pairs(std::span<const EvalPair> pairs, const Embedder& embedder,
                             double max_audio_s) {
  MetricsReport report;
  report.embedder = embedder.name();
  if (pairs.empty()) throw ValueError("evaluate: no examples");

  std::vector<MatF> ref_embeds, test_embeds;
  Eigen::Index total_ref = 0, total_test = 0;
  double f1_sum = 0.0, p_sum = 0.0, r_sum = 0.0;
  int f1_count = 0;
  for (const EvalPair& pair : pairs) {
    ExampleMetrics ex;
    ex.track_id = pair.track_id;
    auto ref_audio = truncate_audio(pair.ref_audio, max_audio_s, 16000);
    auto test_audio = truncate_audio(pair.test_audio, max_audio_s, 16000);
    MatF e_ref = embedder.embed(ref_audio);
    MatF e_test = embedder.embed(test_audio);
    ex.recon = recon_distance(e_ref, e_test, &report.warnings);
    if (pair.render_wall_s > 0.0)
      ex.rt = rt_factor(static_cast<double>(test_audio.size()) / 16000.0, pair.render_wall_s);
    if (pair.ref_notes && pair.est_notes) {
      ex.f1 = note_f1(*pair.ref_notes, *pair.est_notes);
      f1_sum += ex.f1->f1;
      p_sum += ex.f1->precision;
      r_sum += ex.f1->recall;
      ++f1_count;
    }
    total_ref += e_ref.rows();
    total_test += e_test.rows();
    ref_embeds.push_back(std::move(e_ref));
    test_embeds.push_back(std::move(e_test));
    report.per_example.push_back(ex);
  }

  double recon_sum = 0.0, rt_sum = 0.0;
  int rt_count = 0;
  for (const auto& ex : report.per_example) {
    recon_sum += ex.recon;
    if (ex.rt > 0.0) {
      rt_sum += ex.rt;
      ++rt_count;
    }
  }
  report.recon = recon_sum / static_cast<double>(report.per_example.size());
  report.rt = rt_count ? rt_sum / rt_count : 0.0;

  MatF pooled_ref(total_ref, embedder.dim()), pooled_test(total_test, embedder.dim());
  Eigen::Index r0 = 0, t0 = 0;
  for (const auto& e : ref_embeds) {
    pooled_ref.middleRows(r0, e.rows()) = e;
    r0 += e.rows();
  }
  for (const auto& e : test_embeds) {
    pooled_test.middleRows(t0, e.rows()) = e;
    t0 += e.rows();
  }
  report.fad = fad(pooled_ref, pooled_test, 1e-6, &report.warnings);

  if (f1_count > 0) {
    report.transcription_f1 = f1_sum / f1_count;
    report.precision = p_sum / f1_count;
    report.recall = r_sum / f1_count;
  }
  return report;
}

MetricsReport evaluate(const Checkpoint& ckpt, const Dataset& dataset, const Embedder& embedder,
                       const EvalOptions& opts) {
  if (dataset.tracks.empty()) throw ValueError("evaluate: empty dataset");

  struct Rendered {
    std::vector<float> audio;
    double wall = 0.0;
    std::vector<TimedNote> est_notes;
    bool has_est = false;
  };
  std::vector<Rendered> rendered(dataset.tracks.size());
  Warnings warnings;
  for (size_t t = 0; t < dataset.tracks.size(); ++t) {
    RenderedTrack rt = render_track(dataset.tracks[t].notes, ckpt, opts.render);
    rendered[t].audio = std::move(rt.audio);
    rendered[t].wall = rt.total_wall_s;
    warnings.insert(warnings.end(), rt.warnings.begin(), rt.warnings.end());
    if (opts.transcriber_command) {
      fs::path wav = fs::path(opts.scratch_dir) / ("eval_render_" + std::to_string(t) + ".wav");
      write_wav(wav.string(), rendered[t].audio, ckpt.spec_config.sample_rate);
      ExternalTranscriber transcriber{*opts.transcriber_command};
      rendered[t].est_notes = transcriber.transcribe(wav.string(), opts.scratch_dir);
      rendered[t].has_est = true;
      fs::remove(wav);
    }
  }

  std::vector<EvalPair> pairs;
  for (size_t t = 0; t < dataset.tracks.size(); ++t) {
    EvalPair pair;
    pair.track_id = static_cast<int>(t);
    pair.ref_audio = dataset.tracks[t].audio;
    pair.test_audio = rendered[t].audio;
    pair.render_wall_s = rendered[t].wall;
    if (rendered[t].has_est) {
      pair.ref_notes = &dataset.tracks[t].notes;
      pair.est_notes = &rendered[t].est_notes;
    }
    pairs.push_back(pair);
  }
  MetricsReport report = evaluate_pairs(pairs, embedder, opts.max_audio_s);
  report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
  json echo{{"embedder", opts.embedder},
            {"num_steps", opts.render.num_steps},
            {"guidance_weight", opts.render.guidance_weight},
            {"use_context", opts.render.use_context},
            {"seed", opts.render.seed},
            {"max_audio_s", opts.max_audio_s}};
  report.config_echo = echo.dump();
  return report;
}

std::string MetricsReport::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["embedder"] = embedder;
  j["recon"] = recon;
  j["fad"] = fad;
  j["transcription_f1"] = transcription_f1 ? json(*transcription_f1) : json(nullptr);
  j["precision"] = precision ? json(*precision) : json(nullptr);
  j["recall"] = recall ? json(*recall) : json(nullptr);
  j["rt_factor"] = rt;
  json per = json::array();
  for (const auto& ex : per_example) {
    json je{{"track", ex.track_id}, {"recon", ex.recon}, {"rt_factor", ex.rt}};
    if (ex.f1) {
      je["f1"] = ex.f1->f1;
      je["precision"] = ex.f1->precision;
      je["recall"] = ex.f1->recall;
    }
    per.push_back(std::move(je));
  }
  j["per_example"] = std::move(per);
  if (!config_echo.empty()) j["config"] = json::parse(config_echo);
  j["warnings"] = warnings;
  return j.dump(2);
}

}  // namespace melsynth
