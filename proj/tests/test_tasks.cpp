#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "cmn/tasks.hpp"

namespace {

// Independent separability check: nearest class centroid on train means.
template <class T>
double centroid_accuracy(const cmn::TaskDataset<T>& task) {
  std::size_t nfeat = task.train_x[0].size();
  std::vector<std::vector<double>> mean(task.class_count, std::vector<double>(nfeat, 0.0));
  std::vector<int> count(task.class_count, 0);
  for (std::size_t i = 0; i < task.train_x.size(); ++i) {
    int c = task.train_y[i] - task.class_start;
    ++count[c];
    for (std::size_t j = 0; j < nfeat; ++j) mean[c][j] += task.train_x[i][j];
  }
  for (int c = 0; c < task.class_count; ++c)
    for (auto& v : mean[c]) v /= count[c];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < task.test_x.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < task.class_count; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < nfeat; ++j) {
        double diff = static_cast<double>(task.test_x[i][j]) - mean[c][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best + task.class_start == task.test_y[i]) ++hits;
  }
  return static_cast<double>(hits) / task.test_x.size();
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& p) : path(p) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("blob tasks are deterministic and class-incremental") {
  cmn::SyntheticSpec spec;
  spec.classes_per_task = 2;
  spec.dim = 8;
  spec.seed = 11;
  auto a = cmn::gen_synthetic_tasks<double>(spec, 3);
  auto b = cmn::gen_synthetic_tasks<double>(spec, 3);

  REQUIRE(a.tasks.size() == 3);
  CHECK(a.total_classes == 6);
  CHECK(a.provenance == "synthetic");
  for (int k = 0; k < 3; ++k) {
    CHECK(a.tasks[k].class_start == 2 * k);
    CHECK(a.tasks[k].class_count == 2);
    CHECK(a.tasks[k].feature_shape == cmn::Shape{8});
    CHECK(a.tasks[k].train_x == b.tasks[k].train_x);  // identical bytes per seed
    CHECK(a.tasks[k].train_y == b.tasks[k].train_y);
    CHECK(a.tasks[k].test_x == b.tasks[k].test_x);
  }

  spec.seed = 12;
  auto c = cmn::gen_synthetic_tasks<double>(spec, 3);
  CHECK(a.tasks[0].train_x != c.tasks[0].train_x);
}

TEST_CASE("well-separated blobs admit a near-perfect simple classifier") {
  cmn::SyntheticSpec spec;
  spec.dim = 8;
  spec.separation = 6.0;
  spec.noise = 1.0;
  spec.samples_per_class = 60;
  spec.test_per_class = 30;
  spec.seed = 21;
  auto seq = cmn::gen_synthetic_tasks<double>(spec, 2);
  for (const auto& task : seq.tasks) CHECK(centroid_accuracy(task) >= 0.99);
}

TEST_CASE("zero separation collapses to chance level") {
  // Median over 5 seeds of a centroid classifier on indistinguishable classes.
  std::vector<double> accs;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    cmn::SyntheticSpec spec;
    spec.dim = 8;
    spec.separation = 0.0;
    spec.samples_per_class = 200;
    spec.test_per_class = 200;
    spec.seed = s;
    auto seq = cmn::gen_synthetic_tasks<double>(spec, 1);
    accs.push_back(centroid_accuracy(seq.tasks[0]));
  }
  std::sort(accs.begin(), accs.end());
  CHECK(accs[2] == Catch::Approx(0.5).margin(0.03));
}

TEST_CASE("striped patterns produce square maps and are separable") {
  cmn::SyntheticSpec spec;
  spec.mode = cmn::SyntheticSpec::StripedPatterns;
  spec.side = 6;
  spec.separation = 6.0;
  spec.noise = 0.5;
  spec.seed = 31;
  auto seq = cmn::gen_synthetic_tasks<double>(spec, 2);
  CHECK(seq.tasks[0].feature_shape == (cmn::Shape{1, 6, 6}));
  CHECK(seq.tasks[0].train_x[0].size() == 36);
  for (const auto& task : seq.tasks) CHECK(centroid_accuracy(task) >= 0.95);

  auto again = cmn::gen_synthetic_tasks<double>(spec, 2);
  CHECK(seq.tasks[1].train_x == again.tasks[1].train_x);
}

TEST_CASE("synthetic spec validation") {
  cmn::SyntheticSpec spec;
  spec.classes_per_task = 0;
  CHECK_THROWS_AS(cmn::gen_synthetic_tasks<double>(spec, 1), cmn::ValueError);
  spec.classes_per_task = 2;
  spec.dim = 0;
  CHECK_THROWS_AS(cmn::gen_synthetic_tasks<double>(spec, 1), cmn::ValueError);
  spec.dim = 4;
  spec.separation = -1.0;
  CHECK_THROWS_AS(cmn::gen_synthetic_tasks<double>(spec, 1), cmn::ValueError);
  spec.separation = 1.0;
  CHECK_THROWS_AS(cmn::gen_synthetic_tasks<double>(spec, 0), cmn::ValueError);
  spec.mode = cmn::SyntheticSpec::StripedPatterns;
  spec.side = 1;
  CHECK_THROWS_AS(cmn::gen_synthetic_tasks<double>(spec, 1), cmn::ValueError);
}

TEST_CASE("noise tasks are deterministic with near-uniform labels") {
  auto a = cmn::gen_noise_task<double>({8}, 4, 400, 77);
  auto b = cmn::gen_noise_task<double>({8}, 4, 400, 77);
  CHECK(a.train_x == b.train_x);
  CHECK(a.train_y == b.train_y);

  // Loose chi-square uniformity check: 4 bins, expected 100 each.
  std::vector<int> hist(4, 0);
  for (int y : a.train_y) ++hist[y];
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - 100.0) * (h - 100.0) / 100.0;
  CHECK(chi2 < 16.27);  // chi2_{3, 0.999}

  CHECK_THROWS_AS(cmn::gen_noise_task<double>({8}, 4, 3, 77), cmn::ValueError);
}

TEST_CASE("noise tasks carry no learnable signal") {
  // Centroid classifier, 5 seeds: median accuracy within 5% of chance.
  std::vector<double> accs;
  for (std::uint64_t s = 1; s <= 5; ++s)
    accs.push_back(centroid_accuracy(cmn::gen_noise_task<double>({8}, 2, 600, s)));
  std::sort(accs.begin(), accs.end());
  CHECK(accs[2] == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("csv loader parses small files and reports error coordinates") {
  TempFile f("/tmp/cmn_test_tasks.csv");
  {
    std::ofstream out(f.path);
    out << "label,f0,f1,f2\n0,1.0,2.0,3.0\n1,4.0,5.0,6.0\n0,7.0,8.0,9.0\n";
  }
  auto task = cmn::load_csv_dataset<double>(f.path);
  REQUIRE(task.train_x.size() == 3);
  CHECK(task.class_count == 2);
  CHECK(task.feature_shape == cmn::Shape{3});
  CHECK(task.train_y == std::vector<int>{0, 1, 0});
  CHECK(task.train_x[1] == std::vector<double>{4.0, 5.0, 6.0});

  {
    std::ofstream out(f.path);
    out << "label,f0,f1,f2\n0,1.0,2.0,oops\n";
  }
  CHECK_THROWS_WITH(cmn::load_csv_dataset<double>(f.path),
                    Catch::Matchers::ContainsSubstring("row 2, column 4"));

  {
    std::ofstream out(f.path);
    out << "id,f0\n0,1.0\n";
  }
  CHECK_THROWS_WITH(cmn::load_csv_dataset<double>(f.path),
                    Catch::Matchers::ContainsSubstring("label"));

  CHECK_THROWS_AS(cmn::load_csv_dataset<double>("/tmp/definitely_missing.csv"), cmn::ValueError);
}

TEST_CASE("csv schema checks labels and image geometry") {
  TempFile f("/tmp/cmn_test_schema.csv");
  {
    std::ofstream out(f.path);
    out << "label,f0,f1,f2,f3\n0,1,2,3,4\n3,5,6,7,8\n";
  }
  cmn::CsvSchema img;
  img.image_side = 2;
  auto task = cmn::load_csv_dataset<double>(f.path, img);
  CHECK(task.feature_shape == (cmn::Shape{1, 2, 2}));

  cmn::CsvSchema bad_side;
  bad_side.image_side = 3;
  CHECK_THROWS_AS(cmn::load_csv_dataset<double>(f.path, bad_side), cmn::ValueError);

  cmn::CsvSchema narrow;
  narrow.expected_classes = 2;  // label 3 in row 3 violates it
  CHECK_THROWS_WITH(cmn::load_csv_dataset<double>(f.path, narrow),
                    Catch::Matchers::ContainsSubstring("row 3"));
}

TEST_CASE("csv round-trip preserves tensors exactly") {
  cmn::SyntheticSpec spec;
  spec.dim = 5;
  spec.seed = 41;
  spec.samples_per_class = 10;
  spec.test_per_class = 2;
  auto task = cmn::gen_synthetic_tasks<double>(spec, 1).tasks[0];

  TempFile f("/tmp/cmn_test_roundtrip.csv");
  cmn::save_csv_dataset(task, f.path);
  auto loaded = cmn::load_csv_dataset<double>(f.path);
  CHECK(loaded.train_x == task.train_x);
  CHECK(loaded.train_y == task.train_y);
}

TEST_CASE("task sequence validation catches gaps") {
  cmn::SyntheticSpec spec;
  spec.seed = 51;
  auto seq = cmn::gen_synthetic_tasks<double>(spec, 2);
  CHECK_NOTHROW(seq.validate());

  seq.tasks[1].class_start = 5;  // leaves a hole after task 0's [0, 2)
  for (auto& y : seq.tasks[1].train_y) y += 3;
  for (auto& y : seq.tasks[1].test_y) y += 3;
  CHECK_THROWS_WITH(seq.validate(), Catch::Matchers::ContainsSubstring("contiguous"));

  seq = cmn::gen_synthetic_tasks<double>(spec, 2);
  seq.total_classes = 7;
  CHECK_THROWS_WITH(seq.validate(), Catch::Matchers::ContainsSubstring("total_classes"));
}
