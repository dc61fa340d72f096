#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/model.hpp"

namespace mtda {

struct DomainAccuracy {
  int domain_id = -1;
  std::string name;
  double accuracy = 0.0;
  std::size_t sample_count = 0;
};

struct EvalReport {
  std::vector<DomainAccuracy> per_domain;  // every eval split, source included
  double source_accuracy = 0.0;
  double average_target_accuracy = 0.0;    // mean over target domains
};

/// Accuracy of the MLP head on one labeled split (eval mode, chunked).
inline double split_accuracy(ModelBundle& model, const DomainDataset& split) {
  if (split.samples.empty()) throw ContractError("split_accuracy: empty split");
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < split.samples.size(); begin += kChunk) {
    const std::size_t end = std::min(split.samples.size(), begin + kChunk);
    std::vector<Sample> chunk(split.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                              split.samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix probs = model.mlp_probabilities(feature_matrix(chunk));
    const auto pred = row_argmax(probs);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      if (chunk[i].label && pred[i] == *chunk[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.samples.size());
}

/// Evaluates the model on every held-out split of the task.
inline EvalReport evaluate(ModelBundle& model, const MTDATask& task) {
  EvalReport report;
  double target_sum = 0.0;
  std::size_t target_count = 0;
  for (const DomainDataset& split : task.eval_splits) {
    DomainAccuracy da;
    da.domain_id = split.domain_id;
    da.name = split.name;
    da.sample_count = split.samples.size();
    da.accuracy = split_accuracy(model, split);
    if (split.domain_id == task.source.domain_id) {
      report.source_accuracy = da.accuracy;
    } else {
      target_sum += da.accuracy;
      ++target_count;
    }
    report.per_domain.push_back(std::move(da));
  }
  if (target_count > 0)
    report.average_target_accuracy = target_sum / static_cast<double>(target_count);
  return report;
}

/// Writes feature vectors for every evaluation sample as CSV: uid, domain,
/// label (-1 when unknown), then one column per feature dimension. One header
/// line plus one row per sample; eval splits are written in task order.
inline void export_embeddings(ModelBundle& model, const MTDATask& task,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("embeddings: cannot open '" + path + "' for writing");
  const int d = model.config().effective_feature_dim();
  out << "uid,domain,label";
  for (int j = 0; j < d; ++j) out << ",f" << j;
  out << "\n";
  out.precision(10);

  constexpr std::size_t kChunk = 512;
  for (const DomainDataset& split : task.eval_splits) {
    const std::vector<Sample>& samples = split.samples;
    for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
      const std::size_t end = std::min(samples.size(), begin + kChunk);
      std::vector<Sample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                samples.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix feats = model.features(feature_matrix(chunk));
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        out << chunk[i].uid << ',' << chunk[i].domain_id << ','
            << (chunk[i].label ? *chunk[i].label : -1);
        for (int j = 0; j < d; ++j) out << ',' << feats(static_cast<Eigen::Index>(i), j);
        out << "\n";
      }
    }
  }
  if (!out) throw IoError("embeddings: write to '" + path + "' failed");
}

}  // namespace mtda
