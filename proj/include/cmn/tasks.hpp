#pragma once

// Task construction: synthetic class-incremental sequences (gaussian blobs
// and striped patterns), unlearnable noise tasks for the task-conflict
// setting, and CSV ingestion/export. All generators are pure functions of
// their seed.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmn/rng.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

template <class T>
struct TaskDataset {
  Shape feature_shape;  // {d} or {C, H, W}
  std::vector<std::vector<T>> train_x;
  std::vector<int> train_y;  // global class labels
  std::vector<std::vector<T>> test_x;
  std::vector<int> test_y;
  int class_start = 0;
  int class_count = 0;

  int class_end() const { return class_start + class_count; }

  void validate() const {
    if (class_count < 1) throw ValueError("TaskDataset: class_count must be >= 1");
    if (train_x.size() != train_y.size() || test_x.size() != test_y.size())
      throw ValueError("TaskDataset: feature/label length mismatch");
    auto nfeat = static_cast<std::size_t>(shape_numel(feature_shape));
    for (const auto& v : train_x)
      if (v.size() != nfeat) throw ValueError("TaskDataset: bad train feature length");
    for (int y : train_y)
      if (y < class_start || y >= class_end())
        throw ValueError("TaskDataset: train label " + std::to_string(y) + " outside [" +
                         std::to_string(class_start) + ", " + std::to_string(class_end()) + ")");
    for (int y : test_y)
      if (y < class_start || y >= class_end())
        throw ValueError("TaskDataset: test label out of range");
  }
};

template <class T>
struct TaskSequence {
  std::vector<TaskDataset<T>> tasks;
  int total_classes = 0;
  std::string provenance;  // synthetic | csv | noise

  void validate() const {
    int next = 0;
    for (const auto& t : tasks) {
      t.validate();
      if (t.class_start != next)
        throw ValueError("TaskSequence: class offsets not contiguous at task starting " +
                         std::to_string(t.class_start));
      next = t.class_end();
    }
    if (next != total_classes) throw ValueError("TaskSequence: total_classes mismatch");
  }
};

struct SyntheticSpec {
  enum Mode { GaussianBlobs, StripedPatterns } mode = GaussianBlobs;
  int classes_per_task = 2;
  int dim = 8;            // vector dim (blobs)
  int side = 6;           // image side (stripes); channels fixed at 1
  int samples_per_class = 60;
  int test_per_class = 30;
  double separation = 4.0;
  double noise = 1.0;
  bool shared_geometry = false;      // later tasks reuse task 0's class geometry
  double geometry_correlation = 0.0; // 0 = independent, 1 = aligned with task 0
  int later_samples_per_class = 0;   // train-set size for tasks k >= 1; 0 = same
  std::uint64_t seed = 0;

  void validate() const {
    if (classes_per_task < 1) throw ValueError("synthetic: classes_per_task must be >= 1");
    if (separation < 0.0) throw ValueError("synthetic: separation must be >= 0");
    if (geometry_correlation < 0.0 || geometry_correlation > 1.0)
      throw ValueError("synthetic: geometry_correlation must be in [0, 1]");
    if (later_samples_per_class < 0)
      throw ValueError("synthetic: later_samples_per_class must be >= 0");
    if (mode == GaussianBlobs && dim < 1) throw ValueError("synthetic: degenerate dim");
    if (mode == StripedPatterns && side < 2) throw ValueError("synthetic: degenerate side");
    if (samples_per_class < 1 || test_per_class < 1)
      throw ValueError("synthetic: samples per class must be >= 1");
  }
};

namespace detail {

inline std::vector<double> random_unit_vector(int dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-9);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace detail

template <class T>
TaskSequence<T> gen_synthetic_tasks(const SyntheticSpec& spec, int num_tasks) {
  spec.validate();
  if (num_tasks < 1) throw ValueError("gen_synthetic_tasks: need at least one task");

  TaskSequence<T> seq;
  seq.provenance = "synthetic";
  seq.total_classes = num_tasks * spec.classes_per_task;

  // Class geometry first, in one stream, so tasks are stable under seed.
  Rng geo(derive_seed(spec.seed, {0x6765u}));
  int geo_classes = spec.shared_geometry ? spec.classes_per_task : seq.total_classes;
  std::vector<std::vector<double>> directions;
  std::vector<double> angles, freqs;
  for (int c = 0; c < geo_classes; ++c) {
    // Tasks k >= 1 can be correlated with task 0's geometry: related but
    // still distinguishable classes (rho = 1 reproduces shared_geometry).
    int base = c % spec.classes_per_task;
    double rho = c < spec.classes_per_task ? 0.0 : spec.geometry_correlation;
    if (spec.mode == SyntheticSpec::GaussianBlobs) {
      auto dir = detail::random_unit_vector(spec.dim, geo);
      if (rho > 0.0) {
        double norm = 0.0;
        for (int i = 0; i < spec.dim; ++i) {
          dir[static_cast<std::size_t>(i)] = rho * directions[base][static_cast<std::size_t>(i)] +
                                             std::sqrt(1.0 - rho * rho) * dir[static_cast<std::size_t>(i)];
          norm += dir[static_cast<std::size_t>(i)] * dir[static_cast<std::size_t>(i)];
        }
        norm = std::sqrt(norm);
        for (auto& x : dir) x /= norm;
      }
      directions.push_back(std::move(dir));
    } else {
      double a = geo.uniform(0.0, 3.141592653589793);
      double fq = geo.uniform(1.0, 2.5);
      if (rho > 0.0) {
        a = rho * angles[base] + (1.0 - rho) * a;
        fq = rho * freqs[base] + (1.0 - rho) * fq;
      }
      angles.push_back(a);
      freqs.push_back(fq);
    }
  }

  for (int k = 0; k < num_tasks; ++k) {
    TaskDataset<T> task;
    task.class_start = k * spec.classes_per_task;
    task.class_count = spec.classes_per_task;
    task.feature_shape = spec.mode == SyntheticSpec::GaussianBlobs
                             ? Shape{spec.dim}
                             : Shape{1, spec.side, spec.side};
    Rng rng(derive_seed(spec.seed, {0x7461u, (std::uint64_t)k}));

    for (int c = 0; c < spec.classes_per_task; ++c) {
      int global = task.class_start + c;
      int geo_idx = spec.shared_geometry ? c : global;
      auto sample = [&]() {
        std::vector<T> x;
        if (spec.mode == SyntheticSpec::GaussianBlobs) {
          x.resize(static_cast<std::size_t>(spec.dim));
          for (int i = 0; i < spec.dim; ++i)
            x[static_cast<std::size_t>(i)] = static_cast<T>(
                spec.separation * directions[geo_idx][i] + spec.noise * rng.normal());
        } else {
          x.resize(static_cast<std::size_t>(spec.side) * spec.side);
          double ca = std::cos(angles[geo_idx]), sa = std::sin(angles[geo_idx]);
          for (int r = 0; r < spec.side; ++r)
            for (int col = 0; col < spec.side; ++col)
              x[static_cast<std::size_t>(r) * spec.side + col] = static_cast<T>(
                  spec.separation * std::sin(freqs[geo_idx] * (r * ca + col * sa)) +
                  spec.noise * rng.normal());
        }
        return x;
      };
      int n_train = k > 0 && spec.later_samples_per_class > 0 ? spec.later_samples_per_class
                                                             : spec.samples_per_class;
      for (int i = 0; i < n_train; ++i) {
        task.train_x.push_back(sample());
        task.train_y.push_back(global);
      }
      for (int i = 0; i < spec.test_per_class; ++i) {
        task.test_x.push_back(sample());
        task.test_y.push_back(global);
      }
    }
    seq.tasks.push_back(std::move(task));
  }
  seq.validate();
  return seq;
}

// i.i.d. standard-normal features with uniform random labels: unlearnable by
// construction. Used as the conflicting source task.
template <class T>
TaskDataset<T> gen_noise_task(const Shape& feature_shape, int classes, int n,
                              std::uint64_t seed, int class_start = 0) {
  if (n < classes) throw ValueError("gen_noise_task: need at least one sample per class");
  TaskDataset<T> task;
  task.feature_shape = feature_shape;
  task.class_start = class_start;
  task.class_count = classes;
  Rng rng(derive_seed(seed, {0x6e6fu}));
  auto nfeat = static_cast<std::size_t>(shape_numel(feature_shape));
  auto fill = [&](std::vector<std::vector<T>>& xs, std::vector<int>& ys, int count) {
    for (int i = 0; i < count; ++i) {
      std::vector<T> x(nfeat);
      for (auto& v : x) v = static_cast<T>(rng.normal());
      xs.push_back(std::move(x));
      ys.push_back(class_start + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
    }
  };
  fill(task.train_x, task.train_y, n);
  fill(task.test_x, task.test_y, std::max(classes, n / 2));
  task.validate();
  return task;
}

// -- CSV ingestion -----------------------------------------------------------
//
// Format: header `label,f0,f1,...`, UTF-8, decimal point, no quoting.

struct CsvSchema {
  int image_side = 0;      // 0 = flat vector features
  int expected_classes = 0;  // 0 = infer from data
};

template <class T>
TaskDataset<T> load_csv_dataset(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ValueError("load_csv_dataset: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ValueError("load_csv_dataset: empty file " + path);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header[0] != "label")
    throw ValueError("load_csv_dataset: first header column must be 'label' in " + path);
  int nfeat = static_cast<int>(header.size()) - 1;
  if (nfeat < 1) throw ValueError("load_csv_dataset: no feature columns in " + path);
  if (schema.image_side > 0 && schema.image_side * schema.image_side != nfeat)
    throw ValueError("load_csv_dataset: " + std::to_string(nfeat) +
                     " features do not form a " + std::to_string(schema.image_side) +
                     "-sided square image");

  TaskDataset<T> task;
  task.feature_shape = schema.image_side > 0
                           ? Shape{1, schema.image_side, schema.image_side}
                           : Shape{nfeat};
  int max_label = -1;
  int row = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    int label = -1;
    std::vector<T> feats;
    feats.reserve(static_cast<std::size_t>(nfeat));
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        if (col == 1)
          label = static_cast<int>(v);
        else
          feats.push_back(static_cast<T>(v));
      } catch (const std::exception&) {
        throw ValueError("load_csv_dataset: malformed numeric cell at row " +
                         std::to_string(row) + ", column " + std::to_string(col) + " in " + path);
      }
    }
    if (static_cast<int>(feats.size()) != nfeat)
      throw ValueError("load_csv_dataset: row " + std::to_string(row) + " has " +
                       std::to_string(feats.size()) + " features, expected " +
                       std::to_string(nfeat));
    if (label < 0) throw ValueError("load_csv_dataset: negative label at row " + std::to_string(row));
    if (schema.expected_classes > 0 && label >= schema.expected_classes)
      throw ValueError("load_csv_dataset: label " + std::to_string(label) + " at row " +
                       std::to_string(row) + " outside declared class set of " +
                       std::to_string(schema.expected_classes));
    max_label = std::max(max_label, label);
    task.train_x.push_back(std::move(feats));
    task.train_y.push_back(label);
  }
  if (task.train_x.empty()) throw ValueError("load_csv_dataset: no data rows in " + path);
  task.class_count = schema.expected_classes > 0 ? schema.expected_classes : max_label + 1;
  // No split markers in the format: callers slice train/test themselves.
  task.test_x = task.train_x;
  task.test_y = task.train_y;
  task.validate();
  return task;
}

template <class T>
void save_csv_dataset(const TaskDataset<T>& task, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValueError("save_csv_dataset: cannot open " + path + " for writing");
  auto nfeat = shape_numel(task.feature_shape);
  out << "label";
  for (std::int64_t i = 0; i < nfeat; ++i) out << ",f" << i;
  out << "\n";
  out.precision(17);
  for (std::size_t r = 0; r < task.train_x.size(); ++r) {
    out << task.train_y[r];
    for (auto v : task.train_x[r]) out << ',' << static_cast<double>(v);
    out << "\n";
  }
}

}  // namespace cmn
