#pragma once

// Image-folder dataset loading. This is the only header that pulls in
// OpenCV; link cv::core/imgcodecs/imgproc wherever it is included.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mtda/data.hpp"
#include "mtda/errors.hpp"

namespace mtda {

namespace detail {

/// Decodes one image to a flat channel-major (c, y, x) row scaled to [0,1],
/// resized to side x side, RGB. Returns an empty vector when unreadable.
inline std::vector<double> decode_image(const std::filesystem::path& file, int side) {
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return {};
  cv::Mat resized;
  cv::resize(bgr, resized, cv::Size(side, side), 0.0, 0.0, cv::INTER_AREA);
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  std::vector<double> flat(static_cast<std::size_t>(3) * side * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const cv::Vec3b px = rgb.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c)
        flat[static_cast<std::size_t>(c) * side * side + static_cast<std::size_t>(y) * side + x] =
            px[static_cast<int>(c)] / 255.0;
    }
  return flat;
}

inline std::vector<std::filesystem::path> sorted_children(
    const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory() == directories) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Loads one domain from disk. A directory of class subdirectories
/// (`<domain>/<class>/<file>`) yields labeled samples with label ids assigned
/// by lexicographic class-name order; a flat directory of files yields
/// unlabeled samples. Unreadable files are skipped with a warning. Pass
/// `class_ids` to pin the class-name mapping (multi-domain consistency);
/// otherwise it is derived from the subdirectories present.
inline DomainDataset load_image_folder(const std::filesystem::path& path, int domain_id,
                                       int side = 28,
                                       const std::map<std::string, int>* class_ids = nullptr) {
  if (!std::filesystem::is_directory(path))
    throw DatasetError("image folder: '" + path.string() + "' is not a directory");
  DomainDataset out;
  out.domain_id = domain_id;
  out.name = path.filename().string();

  const auto class_dirs = detail::sorted_children(path, /*directories=*/true);
  std::uint64_t index = 0;
  auto push = [&](const std::filesystem::path& file, std::optional<int> label) {
    std::vector<double> flat = detail::decode_image(file, side);
    if (flat.empty()) {
      std::cerr << "warning: skipping unreadable image '" << file.string() << "'\n";
      return;
    }
    Sample s;
    s.uid = static_cast<std::uint64_t>(domain_id) * 1'000'000 + index++;
    s.domain_id = domain_id;
    s.label = label;
    s.features = Eigen::Map<const Eigen::VectorXd>(flat.data(),
                                                   static_cast<Eigen::Index>(flat.size()));
    out.samples.push_back(std::move(s));
  };

  if (!class_dirs.empty()) {
    std::map<std::string, int> ids;
    if (class_ids) {
      ids = *class_ids;
    } else {
      int next = 0;
      for (const auto& dir : class_dirs) ids[dir.filename().string()] = next++;
    }
    for (const auto& dir : class_dirs) {
      const auto it = ids.find(dir.filename().string());
      if (it == ids.end())
        throw DatasetError("image folder: class '" + dir.filename().string() +
                           "' in '" + path.string() + "' is not in the task's class set");
      for (const auto& file : detail::sorted_children(dir, /*directories=*/false))
        push(file, it->second);
    }
  } else {
    for (const auto& file : detail::sorted_children(path, /*directories=*/false))
      push(file, std::nullopt);
  }

  if (out.samples.empty())
    throw DatasetError("image folder: no readable samples under '" + path.string() + "'");
  return out;
}

/// Builds a full task from `<root>/<domain>/<class>/<file>`. Every domain
/// must be stored labeled with the same class set; `source_domain` names the
/// labeled domain, all other directories become targets (sorted by name).
/// Per domain, every `1/eval_fraction`-th sample (per class, deterministic)
/// is held out as the labeled evaluation split. Target training samples have
/// their labels stripped into `latent_target_labels`.
inline MTDATask build_image_task(const std::filesystem::path& root,
                                 const std::string& source_domain, int side = 28,
                                 double eval_fraction = 0.2) {
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
    throw ConfigError("image task: eval_fraction must be in (0, 1)");
  if (!std::filesystem::is_directory(root))
    throw DatasetError("image task: '" + root.string() + "' is not a directory");

  std::vector<std::filesystem::path> domain_dirs = detail::sorted_children(root, true);
  if (domain_dirs.size() < 2)
    throw DatasetError("image task: need the source and at least one target domain");

  // The union of class names across domains defines the label ids; every
  // domain must then contain exactly this set.
  std::map<std::string, int> class_ids;
  for (const auto& domain : domain_dirs)
    for (const auto& cls : detail::sorted_children(domain, true))
      class_ids.emplace(cls.filename().string(), 0);
  if (class_ids.empty())
    throw DatasetError("image task: no class subdirectories under '" + root.string() + "'");
  {
    int next = 0;
    for (auto& [name, id] : class_ids) id = next++;
  }
  for (const auto& domain : domain_dirs) {
    const auto present = detail::sorted_children(domain, true);
    if (present.size() != class_ids.size())
      throw DatasetError("image task: domain '" + domain.filename().string() +
                         "' does not cover the full class set");
  }

  bool source_found = false;
  for (const auto& d : domain_dirs) source_found |= d.filename().string() == source_domain;
  if (!source_found)
    throw DatasetError("image task: source domain '" + source_domain + "' not found");

  MTDATask task;
  task.n_classes = static_cast<int>(class_ids.size());
  task.input.kind = InputKind::kImage;
  task.input.channels = 3;
  task.input.height = side;
  task.input.width = side;

  // Source gets domain id 0 and the first eval split; targets 1..N follow in
  // sorted-name order.
  std::stable_partition(domain_dirs.begin(), domain_dirs.end(),
                        [&](const std::filesystem::path& d) {
                          return d.filename().string() == source_domain;
                        });
  int next_target_id = 1;
  const int stride = static_cast<int>(std::lround(1.0 / eval_fraction));
  for (const auto& dir : domain_dirs) {
    const bool is_source = dir.filename().string() == source_domain;
    const int domain_id = is_source ? 0 : next_target_id++;
    DomainDataset full = load_image_folder(dir, domain_id, side, &class_ids);

    DomainDataset train, eval;
    train.domain_id = eval.domain_id = domain_id;
    train.name = eval.name = full.name;
    std::map<int, int> seen_per_class;  // eval stride counted within a class
    for (Sample& s : full.samples) {
      const int k = seen_per_class[*s.label]++;
      if (k % stride == stride - 1) {
        s.uid = static_cast<std::uint64_t>(domain_id) * 1'000'000 + 500'000 +
                static_cast<std::uint64_t>(eval.samples.size());
        eval.samples.push_back(std::move(s));
      } else {
        s.uid = static_cast<std::uint64_t>(domain_id) * 1'000'000 +
                static_cast<std::uint64_t>(train.samples.size());
        train.samples.push_back(std::move(s));
      }
    }
    if (eval.samples.empty())
      throw DatasetError("image task: domain '" + full.name +
                         "' is too small to hold out an evaluation split");

    if (is_source) {
      task.source = std::move(train);
    } else {
      for (Sample& s : train.samples) {
        task.latent_target_labels[s.uid] = *s.label;
        s.label.reset();
      }
      task.targets.push_back(std::move(train));
    }
    task.eval_splits.push_back(std::move(eval));
  }
  task.validate();
  return task;
}

}  // namespace mtda
