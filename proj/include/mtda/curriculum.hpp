#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mtda/data.hpp"
#include "mtda/losses.hpp"
#include "mtda/model.hpp"
#include "mtda/optim.hpp"

namespace mtda {

/// Training recipes, ordered roughly by machinery involved:
///  - kSourceOnly: supervised pretraining on the source domain, nothing else.
///  - kAdversarial: + domain-adversarial feature alignment against the
///    combined target pool. No pseudo-labels, no extra heads.
///  - kAdversarialCurriculum: adversarial alignment one target domain at a
///    time (easiest first by predictive entropy), harvesting MLP pseudo-labels
///    from each consumed domain into the labeled pool.
///  - kGraphCombined: dual-head co-teaching (MLP head labels edges in-batch,
///    graph head harvests pseudo-labels) over the combined target pool; the
///    labeled pool is rebuilt from scratch after every step.
///  - kGraphCurriculum: co-teaching plus the domain curriculum; harvested
///    labels accumulate as domains are consumed.
enum class Variant {
  kSourceOnly,
  kAdversarial,
  kAdversarialCurriculum,
  kGraphCombined,
  kGraphCurriculum,
};

inline bool variant_uses_graph(Variant v) {
  return v == Variant::kGraphCombined || v == Variant::kGraphCurriculum;
}
inline bool variant_uses_curriculum(Variant v) {
  return v == Variant::kAdversarialCurriculum || v == Variant::kGraphCurriculum;
}
inline bool variant_harvests(Variant v) {
  return v != Variant::kSourceOnly && v != Variant::kAdversarial;
}

/// Which classifier head produces labels for a given duty.
enum class LabelSource { kMlpHead, kGraphHead, kBothHeads };

/// Domain consumption order for curriculum variants.
enum class CurriculumOrder { kEasiestFirst, kHardestFirst };

struct VariantConfig {
  Variant variant = Variant::kGraphCurriculum;
  /// Head that harvests end-of-step pseudo-labels (graph variants; others
  /// always use the MLP head). kBothHeads is not valid here.
  LabelSource harvest = LabelSource::kGraphHead;
  /// Head whose in-batch predictions label node pairs for edge supervision.
  /// kBothHeads lets the graph head fill in nodes the MLP left undecided.
  LabelSource edge_labeler = LabelSource::kMlpHead;
  CurriculumOrder order = CurriculumOrder::kEasiestFirst;

  int steps = 0;             // 0: one per target domain
  int adaptation_iters = 300;
  int finetune_iters = 200;
  int batch_size = 16;

  int pretrain_max_iters = 2000;
  int pretrain_patience = 50;
  double pretrain_holdout_fraction = 0.1;
  double pretrain_min_improvement = 0.01;  // relative, on held-out loss

  bool stratified_targets = false;   // combined pool: round-robin per domain
  bool anchor_with_source = true;    // labeled anchors in harvest batches
  RampKind ramp = RampKind::kProgressive;
  SgdConfig optimizer;
  LossWeights weights;

  void validate() const {
    weights.validate();
    if (harvest == LabelSource::kBothHeads)
      throw ConfigError("variant: harvest head must be a single head");
    if (steps < 0) throw ConfigError("variant: steps must be >= 0");
    if (adaptation_iters < 1) throw ConfigError("variant: adaptation_iters must be >= 1");
    if (finetune_iters < 0) throw ConfigError("variant: finetune_iters must be >= 0");
    if (batch_size < 2) throw ConfigError("variant: batch_size must be >= 2");
    if (pretrain_max_iters < 1) throw ConfigError("variant: pretrain_max_iters must be >= 1");
    if (pretrain_patience < 1) throw ConfigError("variant: pretrain_patience must be >= 1");
    if (pretrain_holdout_fraction <= 0.0 || pretrain_holdout_fraction >= 1.0)
      throw ConfigError("variant: pretrain_holdout_fraction must be in (0, 1)");
    if (pretrain_min_improvement < 0.0)
      throw ConfigError("variant: pretrain_min_improvement must be >= 0");
  }
};

/// One accepted pseudo-label, with full provenance.
struct PseudoLabelRecord {
  std::uint64_t uid = 0;
  int label = -1;
  double confidence = 0.0;
  int step = -1;       // curriculum step that accepted it
  int domain_id = -1;  // origin domain
};

/// Mutable training-set state across curriculum steps.
struct CurriculumState {
  std::vector<Sample> pseudo_source;  // true source + accepted pseudo-labels
  std::vector<int> remaining_domains; // curriculum variants: not yet consumed
  std::vector<int> selection_order;   // consumed domain ids, in order
  int step = 0;
};

struct IterationLoss {
  double classifier = 0.0;
  double edge = 0.0;
  double node = 0.0;
  double adversarial = 0.0;
};

struct StageRecord {
  int step = -1;
  int selected_domain = -1;            // -1: combined target pool
  std::map<int, double> entropies;     // per remaining domain, at selection time
  std::size_t accepted_count = 0;
  double mean_confidence = 0.0;
  std::size_t pseudo_source_size = 0;  // after the update
  std::vector<IterationLoss> losses;
};

struct RunHistory {
  int pretrain_iterations = 0;
  std::vector<StageRecord> stages;
  std::vector<PseudoLabelRecord> all_records;
};

struct RunResult {
  ModelBundle model;
  Rng rng;
  RunHistory history;
  CurriculumState state;
};

namespace detail {

inline Matrix vstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

/// Mean cross-entropy of the MLP head on a labeled pool, eval mode.
inline double evaluate_ce(ModelBundle& model, const std::vector<Sample>& pool) {
  Tape t;
  Rng scratch(0);
  auto out = model.classifier_forward(t, feature_matrix(pool), false, scratch);
  return t.val(classification_loss(t, out.logits, label_vector(pool)))(0, 0);
}

}  // namespace detail

/// Supervised training of the feature extractor and MLP head on a labeled
/// pool. With `until_converged` a held-out slice of the pool is monitored and
/// training stops once `pretrain_patience` iterations pass without the
/// held-out loss improving by `pretrain_min_improvement` (relative); otherwise
/// exactly `iters` iterations run. Returns the number of iterations taken.
inline int supervised_phase(ModelBundle& model, const std::vector<Sample>& pool,
                            const VariantConfig& cfg, int iters,
                            bool until_converged, Rng& rng) {
  if (pool.empty()) throw ContractError("supervised phase: empty pool");
  std::vector<Sample> train = pool;
  std::vector<Sample> holdout;
  if (until_converged) {
    rng.shuffle(train);
    const std::size_t h = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.pretrain_holdout_fraction *
                                                 static_cast<double>(train.size()))));
    if (h >= train.size())
      throw ContractError("supervised phase: pool too small for a held-out split");
    holdout.assign(train.end() - static_cast<std::ptrdiff_t>(h), train.end());
    train.resize(train.size() - h);
  }

  std::vector<Matrix*> params = model.feature_params();
  for (Matrix* p : model.mlp_head_params()) params.push_back(p);
  SgdOptimizer opt(cfg.optimizer);
  EpochSampler sampler(train, rng);

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int k = 0; k < iters; ++k) {
    std::vector<Sample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(sampler.next());

    Tape t;
    auto out = model.classifier_forward(t, feature_matrix(batch), true, rng);
    Value loss = classification_loss(t, out.logits, label_vector(batch));
    t.zero_grad();
    t.backward(loss);
    opt.step(t, params, k);

    if (until_converged) {
      const double held = detail::evaluate_ce(model, holdout);
      if (held < best * (1.0 - cfg.pretrain_min_improvement)) {
        best = held;
        since_best = 0;
      } else if (++since_best >= cfg.pretrain_patience) {
        return k + 1;
      }
    }
  }
  return iters;
}

namespace detail {

/// Definitive node labels for edge supervision: ground truth for the labeled
/// half, thresholded head predictions for the rest. With kBothHeads the graph
/// head fills in nodes the MLP head left undecided.
inline std::vector<std::optional<int>> resolve_edge_labels(
    const std::vector<int>& labeled_half, const Matrix& mlp_probs,
    const Matrix* graph_probs, LabelSource source, double tau) {
  const std::size_t n = static_cast<std::size_t>(mlp_probs.rows());
  std::vector<std::optional<int>> ground_truth(n);
  for (std::size_t i = 0; i < labeled_half.size(); ++i) ground_truth[i] = labeled_half[i];

  const Matrix& primary = source == LabelSource::kGraphHead && graph_probs
                              ? *graph_probs
                              : mlp_probs;
  auto resolved = resolve_node_labels(ground_truth, row_argmax(primary),
                                      row_max(primary), tau);
  if (source == LabelSource::kBothHeads && graph_probs) {
    const auto graph_pred = row_argmax(*graph_probs);
    const auto graph_conf = row_max(*graph_probs);
    for (std::size_t i = 0; i < n; ++i)
      if (!resolved[i] && graph_conf[i] > tau) resolved[i] = graph_pred[i];
  }
  return resolved;
}

}  // namespace detail

/// One adaptation stage: `iters` iterations of balanced labeled/unlabeled
/// minibatches with the routed three-part update. Per iteration, from a
/// single forward graph:
///  1. the discriminator minimizes the weighted adversarial loss,
///  2. the extractor and MLP head minimize classification loss while the
///     gradient-reversed adversarial term pushes features toward alignment,
///  3. (graph variants) the extractor and both graph nets minimize the
///     weighted edge and node losses.
inline void adaptation_stage(ModelBundle& model, const std::vector<Sample>& labeled_pool,
                             const std::vector<const std::vector<Sample>*>& target_pools,
                             const VariantConfig& cfg, int iters, bool use_graph,
                             int source_domain_id, Rng& rng, StageRecord& record) {
  const int B = cfg.batch_size;
  const int n_c = model.config().n_classes;
  MiniBatchSampler sampler(labeled_pool, target_pools, B, rng);
  SgdOptimizer opt(cfg.optimizer);

  std::vector<Matrix*> psi = model.discriminator_params();
  std::vector<Matrix*> clf_group = model.feature_params();
  for (Matrix* p : model.mlp_head_params()) clf_group.push_back(p);
  std::vector<Matrix*> graph_group = model.feature_params();
  for (Matrix* p : model.edge_params()) graph_group.push_back(p);
  for (Matrix* p : model.node_params()) graph_group.push_back(p);

  for (int k = 0; k < iters; ++k) {
    const MiniBatch mb = sampler.next();
    const Matrix x = detail::vstack(feature_matrix(mb.labeled), feature_matrix(mb.unlabeled));
    const std::vector<int> labels = label_vector(mb.labeled);
    std::vector<bool> is_source;
    is_source.reserve(static_cast<std::size_t>(2 * B));
    for (const Sample& s : mb.labeled) is_source.push_back(s.domain_id == source_domain_id);
    for (std::size_t i = 0; i < mb.unlabeled.size(); ++i) is_source.push_back(false);

    const double progress = static_cast<double>(k) / static_cast<double>(iters);
    const double coeff = reversal_coefficient(cfg.ramp, progress);

    Tape t;
    Value feats, mlp_logits, edge_scores, node_logits;
    if (use_graph) {
      auto out = model.graph_forward(t, x, true, rng);
      feats = out.features;
      mlp_logits = out.mlp_logits;
      edge_scores = out.edge_scores;
      node_logits = out.node_logits;
    } else {
      auto out = model.classifier_forward(t, x, true, rng);
      feats = out.features;
      mlp_logits = out.logits;
    }
    Value probs = ad::softmax_rows(t, mlp_logits);
    Value disc_logits = model.discriminator_forward(t, feats, probs, coeff, true, rng);
    Value l_adv = adversarial_loss(t, disc_logits, is_source);
    Value l_ce = classification_loss(t, ad::block(t, mlp_logits, 0, 0, B, n_c), labels);

    IterationLoss il;
    il.classifier = t.val(l_ce)(0, 0);
    il.adversarial = t.val(l_adv)(0, 0);

    // 1) Discriminator.
    Value l_disc = ad::scale(t, l_adv, cfg.weights.adversarial);
    t.zero_grad();
    t.backward(l_disc);
    opt.step(t, psi, k);

    // 2) Extractor + MLP head. The reversal inside the discriminator branch
    // turns this into classification minus the weighted adversarial term.
    Value l_clf = ad::add(t, l_ce, ad::scale(t, l_adv, cfg.weights.adversarial));
    t.zero_grad();
    t.backward(l_clf);
    opt.step(t, clf_group, k);

    // 3) Extractor + graph nets, taught by the in-batch edge labeler.
    if (use_graph) {
      const Matrix mlp_p = t.val(probs);
      const Matrix graph_p = t.val(ad::softmax_rows(t, node_logits));
      const auto resolved = detail::resolve_edge_labels(
          labels, mlp_p, &graph_p, cfg.edge_labeler, cfg.weights.confidence_threshold);
      const TargetAffinity ta = build_target_affinity(resolved);
      Value l_edge = edge_supervision_loss(t, edge_scores, ta);
      Value l_node = classification_loss(t, ad::block(t, node_logits, 0, 0, B, n_c), labels);
      Value l_graph = ad::add(t, ad::scale(t, l_edge, cfg.weights.edge),
                              ad::scale(t, l_node, cfg.weights.node));
      il.edge = t.val(l_edge)(0, 0);
      il.node = t.val(l_node)(0, 0);
      t.zero_grad();
      t.backward(l_graph);
      opt.step(t, graph_group, k);
    }
    record.losses.push_back(il);
  }
}

/// Scans a target pool in eval mode and returns the samples whose predicted
/// confidence strictly exceeds tau. Graph-head harvesting runs each batch as
/// a graph; with `anchor_with_source`, labeled anchor samples are appended to
/// give every batch source context (anchors are never harvested).
inline std::vector<PseudoLabelRecord> harvest_pseudo_labels(
    ModelBundle& model, const std::vector<Sample>& pool,
    const std::vector<Sample>& anchor_pool, const VariantConfig& cfg,
    LabelSource head, int step, Rng& rng) {
  if (head == LabelSource::kBothHeads)
    throw ContractError("harvest: a single head must be chosen");
  std::vector<PseudoLabelRecord> records;
  if (pool.empty()) return records;

  const int B = cfg.batch_size;
  const bool graph_head = head == LabelSource::kGraphHead;
  const bool anchors = graph_head && cfg.anchor_with_source && !anchor_pool.empty();
  std::optional<EpochSampler> anchor_sampler;
  if (anchors) anchor_sampler.emplace(anchor_pool, rng);

  // Chunk boundaries over the pool; a trailing single-sample chunk cannot
  // form a graph on its own, so it is folded into its predecessor.
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t begin = 0; begin < pool.size(); begin += static_cast<std::size_t>(B))
    chunks.emplace_back(begin, std::min(pool.size(), begin + static_cast<std::size_t>(B)));
  if (graph_head && !anchors && chunks.size() > 1 &&
      chunks.back().second - chunks.back().first < 2) {
    chunks[chunks.size() - 2].second = chunks.back().second;
    chunks.pop_back();
  }

  for (const auto& [begin, end] : chunks) {
    std::vector<Sample> batch(pool.begin() + static_cast<std::ptrdiff_t>(begin),
                              pool.begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t n_pool = batch.size();
    if (anchors)
      for (int i = 0; i < B; ++i) batch.push_back(anchor_sampler->next());
    if (graph_head && batch.size() < 2) {
      std::cerr << "warning: harvest batch too small for the graph head; skipped\n";
      continue;
    }
    const Matrix x = feature_matrix(batch);
    const Matrix probs = graph_head ? model.graph_probabilities(x)
                                    : model.mlp_probabilities(x);
    for (std::size_t i = 0; i < n_pool; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(i);
      Eigen::Index arg = 0;
      const double conf = probs.row(row).maxCoeff(&arg);
      if (conf > cfg.weights.confidence_threshold) {
        records.push_back(PseudoLabelRecord{pool[begin + i].uid, static_cast<int>(arg),
                                            conf, step, pool[begin + i].domain_id});
      }
    }
  }
  return records;
}

/// How harvested labels enter the labeled pool: rebuild starts over from the
/// true source every step; accumulate keeps everything gathered so far.
enum class SetUpdate { kRebuild, kAccumulate };

inline void update_source_set(
    CurriculumState& state, const MTDATask& task,
    const std::vector<PseudoLabelRecord>& records, SetUpdate mode,
    const std::unordered_map<std::uint64_t, const Sample*>& target_index) {
  if (mode == SetUpdate::kRebuild) state.pseudo_source = task.source.samples;
  std::unordered_set<std::uint64_t> present;
  present.reserve(state.pseudo_source.size());
  for (const Sample& s : state.pseudo_source) present.insert(s.uid);
  for (const PseudoLabelRecord& r : records) {
    if (present.count(r.uid)) {
      // Existing entries win; the true source label is never overwritten.
      std::cerr << "warning: pseudo-label for uid " << r.uid
                << " ignored, uid already in the labeled pool\n";
      continue;
    }
    auto it = target_index.find(r.uid);
    if (it == target_index.end())
      throw ContractError("update_source_set: record uid " + std::to_string(r.uid) +
                          " not found among target samples");
    Sample s = *it->second;  // keeps the target domain id for adversarial flags
    s.label = r.label;
    state.pseudo_source.push_back(std::move(s));
    present.insert(r.uid);
  }
}

/// Mean predictive entropy of the MLP head over a pool (natural log).
inline double domain_entropy(ModelBundle& model, const std::vector<Sample>& pool) {
  if (pool.empty()) throw ContractError("domain_entropy: empty pool");
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  for (std::size_t begin = 0; begin < pool.size(); begin += kChunk) {
    const std::size_t end = std::min(pool.size(), begin + kChunk);
    std::vector<Sample> chunk(pool.begin() + static_cast<std::ptrdiff_t>(begin),
                              pool.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix probs = model.mlp_probabilities(feature_matrix(chunk));
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
      for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        const double p = probs(i, j);
        if (p > 0.0) total -= p * std::log(p);
      }
  }
  return total / static_cast<double>(pool.size());
}

/// Picks the next domain by mean entropy; ties go to the lowest domain id
/// (map iteration order), keeping selection deterministic.
inline int select_next_domain(const std::map<int, double>& entropies,
                              CurriculumOrder order) {
  if (entropies.empty()) throw ContractError("select_next_domain: nothing to select");
  int best_id = entropies.begin()->first;
  double best = entropies.begin()->second;
  for (const auto& [id, h] : entropies) {
    const bool better =
        order == CurriculumOrder::kEasiestFirst ? h < best : h > best;
    if (better) {
      best = h;
      best_id = id;
    }
  }
  return best_id;
}

/// Called after each curriculum stage (and once more after fine-tuning, with
/// step = -1) so callers can evaluate or checkpoint intermediate models.
using StageCallback =
    std::function<void(ModelBundle&, Rng&, const StageRecord&, const CurriculumState&)>;

/// Runs a full variant: pretraining, adaptation steps, fine-tuning. All
/// randomness flows from `seed`, so identical (task, config, seed) triples
/// reproduce bit-identical models and histories.
inline RunResult run_variant(const MTDATask& task, const ArchitectureConfig& arch,
                             const VariantConfig& cfg, std::uint64_t seed,
                             const StageCallback& on_stage = nullptr) {
  task.validate();
  cfg.validate();
  arch.validate();
  if (arch.n_classes != task.n_classes)
    throw ConfigError("run: architecture n_classes differs from the task");
  if (arch.flat_input_dim() != task.input.flat_dim())
    throw ConfigError("run: architecture input width differs from the task");

  RunResult result;
  result.rng = Rng(seed);
  result.model = ModelBundle(arch, result.rng);
  ModelBundle& model = result.model;
  Rng& rng = result.rng;

  result.history.pretrain_iterations = supervised_phase(
      model, task.source.samples, cfg, cfg.pretrain_max_iters, true, rng);

  result.state.pseudo_source = task.source.samples;
  for (const auto& t : task.targets) result.state.remaining_domains.push_back(t.domain_id);

  if (cfg.variant == Variant::kSourceOnly) return result;

  std::unordered_map<std::uint64_t, const Sample*> target_index;
  for (const auto& t : task.targets)
    for (const Sample& s : t.samples) target_index.emplace(s.uid, &s);

  const int n_targets = static_cast<int>(task.targets.size());
  int steps = cfg.steps > 0 ? cfg.steps : n_targets;
  if (variant_uses_curriculum(cfg.variant) && steps > n_targets) {
    std::cerr << "warning: steps clamped to the " << n_targets << " target domains\n";
    steps = n_targets;
  }

  // Combined pool (kept alive for samplers that reference it).
  std::vector<Sample> combined;
  std::vector<const std::vector<Sample>*> combined_pools;
  if (!variant_uses_curriculum(cfg.variant)) {
    if (cfg.stratified_targets) {
      for (const auto& t : task.targets) combined_pools.push_back(&t.samples);
    } else {
      for (const auto& t : task.targets)
        combined.insert(combined.end(), t.samples.begin(), t.samples.end());
      combined_pools.push_back(&combined);
    }
  }

  if (cfg.variant == Variant::kAdversarial) {
    // One long alignment phase, compute-matched to steps * adaptation_iters.
    StageRecord rec;
    rec.step = 0;
    adaptation_stage(model, result.state.pseudo_source, combined_pools, cfg,
                     steps * cfg.adaptation_iters, false, task.source.domain_id,
                     rng, rec);
    rec.pseudo_source_size = result.state.pseudo_source.size();
    result.history.stages.push_back(std::move(rec));
    if (on_stage)
      on_stage(model, rng, result.history.stages.back(), result.state);
    return result;
  }

  const bool use_graph = variant_uses_graph(cfg.variant);
  const LabelSource harvest_head =
      use_graph ? cfg.harvest : LabelSource::kMlpHead;

  for (int q = 0; q < steps; ++q) {
    StageRecord rec;
    rec.step = q;

    std::vector<const std::vector<Sample>*> pools;
    const std::vector<Sample>* harvest_pool = nullptr;
    if (variant_uses_curriculum(cfg.variant)) {
      if (result.state.remaining_domains.empty()) break;
      for (int id : result.state.remaining_domains)
        rec.entropies[id] = domain_entropy(model, task.target_by_id(id)->samples);
      const int selected = select_next_domain(rec.entropies, cfg.order);
      rec.selected_domain = selected;
      harvest_pool = &task.target_by_id(selected)->samples;
      pools.push_back(harvest_pool);
    } else {
      pools = combined_pools;
      harvest_pool = &combined;
      if (cfg.stratified_targets) {
        // The harvest scan still runs over one flat pool.
        if (combined.empty())
          for (const auto& t : task.targets)
            combined.insert(combined.end(), t.samples.begin(), t.samples.end());
        harvest_pool = &combined;
      }
    }

    adaptation_stage(model, result.state.pseudo_source, pools, cfg,
                     cfg.adaptation_iters, use_graph, task.source.domain_id, rng, rec);

    auto records = harvest_pseudo_labels(model, *harvest_pool, task.source.samples,
                                         cfg, harvest_head, q, rng);
    rec.accepted_count = records.size();
    if (!records.empty()) {
      double conf = 0.0;
      for (const auto& r : records) conf += r.confidence;
      rec.mean_confidence = conf / static_cast<double>(records.size());
    } else {
      std::cerr << "warning: step " << q << " accepted no pseudo-labels\n";
    }

    update_source_set(result.state, task, records,
                      variant_uses_curriculum(cfg.variant) ? SetUpdate::kAccumulate
                                                           : SetUpdate::kRebuild,
                      target_index);
    rec.pseudo_source_size = result.state.pseudo_source.size();
    for (auto& r : records) result.history.all_records.push_back(r);

    if (variant_uses_curriculum(cfg.variant)) {
      result.state.selection_order.push_back(rec.selected_domain);
      auto& rem = result.state.remaining_domains;
      rem.erase(std::remove(rem.begin(), rem.end(), rec.selected_domain), rem.end());
    }
    result.state.step = q + 1;

    result.history.stages.push_back(std::move(rec));
    if (on_stage)
      on_stage(model, rng, result.history.stages.back(), result.state);
  }

  if (cfg.finetune_iters > 0) {
    supervised_phase(model, result.state.pseudo_source, cfg, cfg.finetune_iters,
                     false, rng);
    StageRecord final_rec;
    final_rec.step = -1;  // fine-tuning marker
    final_rec.pseudo_source_size = result.state.pseudo_source.size();
    result.history.stages.push_back(std::move(final_rec));
    if (on_stage)
      on_stage(model, rng, result.history.stages.back(), result.state);
  }
  return result;
}

}  // namespace mtda
