#include "hsiucd/training.hpp"

#include "hsiucd/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace hsiucd {

namespace {

constexpr std::uint64_t kExtractorStream = 1;
constexpr std::uint64_t kPrototypeStream = 2;
constexpr std::uint64_t kPretrainStream = 0x70726574ULL;

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite ") + what + " loss");
}

Mat gather_rows(const Mat& m, const std::vector<int>& idx) {
  Mat out(static_cast<int>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<int>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> anchor_labels(const TrainState& state, const std::vector<const Patch*>& patches) {
  std::vector<int> labels;
  labels.reserve(patches.size());
  for (const Patch* p : patches) {
    const int k = state.split.known_index(p->label);
    labels.push_back(k >= 0 ? k : state.anchors.unknown_index());
  }
  return labels;
}

}  // namespace

Mat TrainState::prototype_features(const EmbeddingBatch& batch) const {
  const Mat& f = config.prototypes.space == "logit" ? batch.logits : batch.penultimate;
  return config.prototypes.normalize ? l2_normalize_rows(f) : f;
}

TrainState init_state(const RunConfig& config, const ClassSplit& split, int bands,
                      const std::string& dataset_name, int class_count) {
  config.validate();
  split.validate(class_count);
  TrainState s;
  s.config = config;
  s.split = split;
  const int known = static_cast<int>(split.known_ids.size());
  ExtractorConfig ec = config.extractor;
  if (ec.input_bands != 0 && ec.input_bands != bands) {
    throw std::invalid_argument("extractor.input_bands " + std::to_string(ec.input_bands) +
                                " does not match the data (" + std::to_string(bands) + " bands)");
  }
  if (ec.logit_dim != 0 && ec.logit_dim != known + 1) {
    throw std::invalid_argument("extractor.logit_dim must equal known classes + 1 (" +
                                std::to_string(known + 1) + ")");
  }
  ec.input_bands = bands;
  ec.logit_dim = known + 1;
  s.config.extractor = ec;
  s.extractor = FeatureExtractor(ec, mix_seed(config.seed, kExtractorStream));
  s.anchors = init_anchors(known + 1, config.phi);

  const int total_classes = static_cast<int>(split.known_ids.size() + split.unknown_ids.size());
  int w = config.prototypes.count;
  if (w == 0) w = default_prototype_count(dataset_name, total_classes);
  if (w < 1.5 * total_classes) {
    throw std::invalid_argument("prototypes.count " + std::to_string(w) + " is below 1.5x the " +
                                std::to_string(total_classes) + " classes");
  }
  s.config.prototypes.count = w;
  const int dim = config.prototypes.space == "logit" ? ec.logit_dim : s.extractor.penultimate_dim();
  s.prototypes = init_prototypes(w, dim, config.prototypes.tau, mix_seed(config.seed, kPrototypeStream));
  s.groups = PrototypeGroups::singletons(w);
  s.groups.known_map.assign(known, -1);
  s.optimizer = Adam(config.optimizer, config.episodes);
  return s;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"osc", osc}, {"ca", ca},       {"ps", ps},       {"pgs", pgs},     {"reg", reg},
          {"kcd", kcd}, {"class", class_loss}, {"disc", disc}, {"total", total}, {"objective", objective}};
}

std::vector<PretrainEpoch> pretrain(TrainState& state, const std::vector<Patch>& pool, int epochs,
                                    const std::function<void(const PretrainEpoch&)>& on_epoch) {
  std::vector<PretrainEpoch> history;
  if (epochs <= 0) return history;
  if (pool.empty()) throw std::invalid_argument("pretrain: empty pool");
  const auto& pc = state.config.pretrain;
  const int known = state.known_count();
  std::vector<int> labels(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    labels[i] = state.split.known_index(pool[i].label);
    if (labels[i] < 0) throw std::invalid_argument("pretrain pool contains a non-known class");
  }
  const long batches = (static_cast<long>(pool.size()) + pc.batch - 1) / pc.batch;
  Adam opt(pc.optimizer, batches * epochs);
  auto params = state.extractor.parameters();
  std::vector<int> order(pool.size());

  for (int e = 0; e < epochs; ++e) {
    const int epoch = state.pretrain_epochs;
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(state.config.seed, kPretrainStream + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<RowVec>> class_rows(known);
    PretrainEpoch stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += pc.batch) {
      const std::size_t end = std::min(order.size(), start + pc.batch);
      std::vector<const Patch*> batch;
      std::vector<int> y;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&pool[order[i]]);
        y.push_back(labels[order[i]]);
      }
      state.extractor.zero_grad();
      auto out = state.extractor.forward(state.extractor.pack(batch), true);
      const Mat dist = distances(out.logits, state.anchors);
      const LossGrad osc = loss_osc(dist, y);
      const LossGrad ca = loss_ca(dist, y, state.config.gamma);
      require_finite(osc.value + ca.value, "pre-training");
      const auto& w = state.config.weights;
      const Mat grad_dist = w.osc * osc.grad + w.ca * ca.grad;
      state.extractor.backward(Mat(), distances_backward(out.logits, state.anchors, dist, grad_dist));
      opt.step(params);
      const double n = static_cast<double>(end - start);
      stats.osc += osc.value * n;
      stats.ca += ca.value * n;
      for (int i = 0; i < dist.rows(); ++i) class_rows[y[i]].push_back(dist.row(i));
    }
    stats.osc /= static_cast<double>(pool.size());
    stats.ca /= static_cast<double>(pool.size());
    stats.class_loss = stats.osc + stats.ca;
    const bool last = e + 1 == epochs;
    if (pc.anchor_update == "epoch" || (pc.anchor_update == "final" && last)) {
      for (int c = 0; c < known; ++c) {
        if (class_rows[c].empty()) continue;
        Mat d(static_cast<int>(class_rows[c].size()), known + 1);
        for (std::size_t i = 0; i < class_rows[c].size(); ++i) d.row(static_cast<int>(i)) = class_rows[c][i];
        update_anchor(state.anchors, c, d);
        const double norm = state.anchors.anchors.row(c).norm();
        if (pc.anchor_rescale && norm > 0.0) state.anchors.anchors.row(c) *= state.anchors.scale / norm;
      }
    }
    ++state.pretrain_epochs;
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

EpisodeStats train_episode(TrainState& state, const Episode& episode, std::uint64_t seed) {
  if (episode.query_known.empty() && episode.query_unknown.empty()) {
    throw std::invalid_argument("train_episode: empty query set");
  }
  if (episode.support.empty()) throw std::invalid_argument("train_episode: empty support set");
  const auto& cfg = state.config;
  const auto& w = cfg.weights;
  const auto patches = episode.all();
  const int m = static_cast<int>(patches.size());
  const int support = static_cast<int>(episode.support.size());

  // 1. weak and strong views; positive pairs are formed after extraction
  std::mt19937_64 rng(seed);
  std::vector<Patch> views;
  views.reserve(2 * m);
  for (const Patch* p : patches) views.push_back(augment_weak(*p, cfg.augment, rng));
  for (const Patch* p : patches) views.push_back(augment_strong(*p, cfg.augment, rng));

  // 2. features for all 2M views
  state.extractor.zero_grad();
  auto out = state.extractor.forward(views, true);

  // 3. anchor losses over every view
  std::vector<int> y = anchor_labels(state, patches);
  std::vector<int> y2(y);
  y2.insert(y2.end(), y.begin(), y.end());
  const Mat dist = distances(out.logits, state.anchors);
  const LossGrad osc = loss_osc(dist, y2);
  const LossGrad ca = loss_ca(dist, y2, cfg.gamma);
  Mat grad_logits = distances_backward(out.logits, state.anchors, dist, w.osc * osc.grad + w.ca * ca.grad);

  // 4. prototype assignments and the pair loss
  const Mat raw = cfg.prototypes.space == "logit" ? out.logits : out.penultimate;
  const Mat feats = cfg.prototypes.normalize ? l2_normalize_rows(raw) : raw;
  const Mat zw = feats.topRows(m);
  const Mat zs = feats.bottomRows(m);
  const Mat pw = assign(zw, state.prototypes);
  const Mat ps = assign(zs, state.prototypes);
  std::vector<int> pair_labels(m, -1);
  for (int i = 0; i < support; ++i) pair_labels[i] = y[i];
  const PositivePairs pairs = build_positive_pairs(zw, zs, pair_labels, rng);
  const Mat pp = gather_rows(ps, pairs.positive);
  const PairLossGrad lps = loss_ps(pw, pp);
  Mat grad_pw = w.ps * lps.grad_a;
  Mat grad_pp = w.ps * lps.grad_b;

  // 5. association graph and the group pair loss
  const Mat jac = jaccard_matrix(association_sets(pw, cfg.prototypes.top_k));
  const Mat qw = group_probabilities(pw, state.groups);
  const Mat qp = group_probabilities(pp, state.groups);
  const PairLossGrad lpgs = loss_pgs(qw, qp);
  grad_pw += w.pgs * group_probabilities_backward(lpgs.grad_a, state.groups);
  grad_pp += w.pgs * group_probabilities_backward(lpgs.grad_b, state.groups);

  // 6. prior regularizer and known-class discrimination on the support
  const LossGrad lreg = loss_reg(pw, state.groups);
  grad_pw += w.reg * lreg.grad;
  const std::span<const int> ys(y.data(), static_cast<std::size_t>(support));
  state.groups.known_map = match_known_groups(qw.topRows(support), ys, state.known_count(), state.groups.count);
  const KcdLossGrad lkcd = loss_kcd(qw.topRows(support), qp.topRows(support), ys, state.groups);
  {
    Mat gq_w = Mat::Zero(m, state.groups.count);
    Mat gq_p = Mat::Zero(m, state.groups.count);
    gq_w.topRows(support) = w.kcd * lkcd.grad_a;
    gq_p.topRows(support) = w.kcd * lkcd.grad_b;
    grad_pw += group_probabilities_backward(gq_w, state.groups);
    grad_pp += group_probabilities_backward(gq_p, state.groups);
  }

  EpisodeStats stats;
  LossBreakdown& L = stats.losses;
  L.osc = osc.value;
  L.ca = ca.value;
  L.ps = lps.value;
  L.pgs = lpgs.value;
  L.reg = lreg.value;
  L.kcd = lkcd.value;
  L.class_loss = L.osc + L.ca;
  L.disc = L.ps + L.pgs + L.reg + L.kcd;
  L.total = L.class_loss + L.disc;
  L.objective = w.osc * L.osc + w.ca * L.ca + w.ps * L.ps + w.pgs * L.pgs + w.reg * L.reg + w.kcd * L.kcd;
  require_finite(L.objective, "episode");
  stats.support = support;
  stats.queries = m - support;
  stats.kcd_skipped = lkcd.skipped;

  // 7. regroup prototypes on the Jaccard graph
  if ((state.episode + 1) % cfg.prototypes.regroup_every == 0) {
    PrototypeGroups regrouped = group_prototypes(jac, cfg.prototypes.resolution, cfg.prototypes.louvain_restarts);
    const Mat q_support = group_probabilities(pw.topRows(support), regrouped);
    regrouped.known_map = match_known_groups(q_support, ys, state.known_count(), regrouped.count);
    state.groups = std::move(regrouped);
    stats.regrouped = true;
  }
  stats.groups = state.groups.count;
  stats.classes = estimate_class_count(state.groups);

  // 8. one optimizer step on the extractor and the prototypes
  Mat grad_ps = Mat::Zero(m, ps.cols());
  for (int i = 0; i < m; ++i) grad_ps.row(pairs.positive[i]) += grad_pp.row(i);
  const AssignGrad gw = assign_backward(zw, state.prototypes, pw, grad_pw);
  const AssignGrad gs = assign_backward(zs, state.prototypes, ps, grad_ps);
  Mat grad_feats(2 * m, feats.cols());
  grad_feats.topRows(m) = gw.z;
  grad_feats.bottomRows(m) = gs.z;
  const Mat grad_raw = cfg.prototypes.normalize ? l2_normalize_rows_backward(raw, grad_feats) : grad_feats;
  if (cfg.prototypes.space == "logit") {
    grad_logits += grad_raw;
    state.extractor.backward(Mat(), grad_logits);
  } else {
    state.extractor.backward(grad_raw, grad_logits);
  }

  Param proto("prototypes", {state.prototypes.count(), state.prototypes.dim()});
  std::copy(state.prototypes.vectors.data(), state.prototypes.vectors.data() + proto.size(), proto.value.begin());
  const Mat grad_c = gw.protos + gs.protos;
  std::copy(grad_c.data(), grad_c.data() + proto.size(), proto.grad.begin());
  auto params = state.extractor.parameters();
  params.push_back(&proto);
  state.optimizer.step(params);
  std::copy(proto.value.begin(), proto.value.end(), state.prototypes.vectors.data());
  if (cfg.prototypes.normalize) state.prototypes.vectors = l2_normalize_rows(state.prototypes.vectors);

  ++state.episode;
  return stats;
}

}  // namespace hsiucd
