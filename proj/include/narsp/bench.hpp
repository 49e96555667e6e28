// Copyright 2026 The narsp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "narsp/config.hpp"
#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/inference.hpp"
#include "narsp/model.hpp"

namespace narsp {

struct LatencyBucket {
  std::string range;
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive; 0 means unbounded
  std::size_t n = 0;
  double median_ms = 0.0;
  double p90_ms = 0.0;
  double p99_ms = 0.0;
  bool operator==(const LatencyBucket&) const = default;
};

struct TimedExample {
  std::size_t length = 0;  // gold target token count
  double ms = 0.0;
};

struct BenchReport {
  std::string mode;
  std::size_t params = 0;
  double overall_median_ms = 0.0;
  std::vector<LatencyBucket> buckets;
  std::vector<std::size_t> forward_counts;  // per example, dataset order
  bool operator==(const BenchReport&) const = default;
};

/// Nearest-rank percentile: the smallest value with at least pct% of the
/// sample at or below it.
inline double nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

/// Left-closed buckets [0, e0), [e0, e1), ..., [e_last, inf); empty buckets
/// are omitted.
inline std::vector<LatencyBucket> bucket_by_length(const std::vector<TimedExample>& timings,
                                                   const std::vector<std::size_t>& edges) {
  if (!std::is_sorted(edges.begin(), edges.end())) throw Error(ErrorCode::BadConfig, "bucket edges must be sorted");
  std::vector<std::vector<double>> groups(edges.size() + 1);
  for (const auto& t : timings) {
    const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), t.length) - edges.begin());
    groups[b].push_back(t.ms);
  }
  std::vector<LatencyBucket> out;
  for (std::size_t b = 0; b < groups.size(); ++b) {
    if (groups[b].empty()) continue;
    LatencyBucket lb;
    lb.lo = b == 0 ? 0 : edges[b - 1];
    lb.hi = b < edges.size() ? edges[b] : 0;
    if (b == 0) {
      lb.range = "<" + std::to_string(lb.hi);
    } else if (b == edges.size()) {
      lb.range = ">=" + std::to_string(lb.lo);
    } else {
      lb.range = std::to_string(lb.lo) + "-" + std::to_string(lb.hi);
    }
    if (edges.empty()) lb.range = "all";
    lb.n = groups[b].size();
    lb.median_ms = nearest_rank(groups[b], 50);
    lb.p90_ms = nearest_rank(groups[b], 90);
    lb.p99_ms = nearest_rank(groups[b], 99);
    out.push_back(std::move(lb));
  }
  return out;
}

inline json to_json(const BenchReport& r) {
  json buckets = json::array();
  for (const auto& b : r.buckets) {
    buckets.push_back({{"range", b.range},
                       {"lo", b.lo},
                       {"hi", b.hi},
                       {"n", b.n},
                       {"median_ms", b.median_ms},
                       {"p90_ms", b.p90_ms},
                       {"p99_ms", b.p99_ms}});
  }
  return json{{"mode", r.mode},
              {"params", r.params},
              {"overall_median_ms", r.overall_median_ms},
              {"buckets", buckets},
              {"forward_counts", r.forward_counts}};
}

inline BenchReport bench_report_from_json(const json& j) {
  const std::string s = "bench report";
  detail::check_keys(j, {"mode", "params", "overall_median_ms", "buckets", "forward_counts"}, s);
  BenchReport r;
  try {
    r.mode = j.at("mode").get<std::string>();
    r.params = j.at("params").get<std::size_t>();
    r.overall_median_ms = j.at("overall_median_ms").get<double>();
    r.forward_counts = j.at("forward_counts").get<std::vector<std::size_t>>();
    for (const auto& b : j.at("buckets")) {
      detail::check_keys(b, {"range", "lo", "hi", "n", "median_ms", "p90_ms", "p99_ms"}, s + ".buckets");
      LatencyBucket lb;
      lb.range = b.at("range").get<std::string>();
      lb.lo = b.at("lo").get<std::size_t>();
      lb.hi = b.at("hi").get<std::size_t>();
      lb.n = b.at("n").get<std::size_t>();
      lb.median_ms = b.at("median_ms").get<double>();
      lb.p90_ms = b.at("p90_ms").get<double>();
      lb.p99_ms = b.at("p99_ms").get<double>();
      r.buckets.push_back(std::move(lb));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, s + ": " + e.what());
  }
  return r;
}

struct BenchOptions {
  std::size_t warmup = 5;
  std::size_t reps = 20;
  std::vector<std::size_t> edges{10, 20, 30, 40};
};

/// Times end-to-end decoding (encode, length prediction, decoder passes and
/// ranking) one utterance at a time on the calling thread. Each example
/// contributes the median of its timed repetitions.
template <typename T>
BenchReport bench_latency(const Model<T>& model, const std::vector<Example>& data, const DecodeConfig& cfg,
                          const BenchOptions& opt = {}) {
  if (opt.reps < 1) throw Error(ErrorCode::BadConfig, "bench: reps must be >= 1");
  BenchReport report;
  report.mode = std::string(to_string(model.config().variant));
  report.params = model.count_parameters();
  std::vector<TimedExample> timings;
  std::vector<double> medians;
  std::vector<double> reps(opt.reps);
  for (const auto& ex : data) {
    const std::vector<std::vector<std::string>> sources{ex.source};
    std::size_t passes = 0;
    for (std::size_t w = 0; w < opt.warmup; ++w) passes = predict_batch(model, sources, cfg).front().forward_passes;
    for (std::size_t r = 0; r < opt.reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      auto pred = predict_batch(model, sources, cfg);
      const auto t1 = std::chrono::steady_clock::now();
      passes = pred.front().forward_passes;
      reps[r] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    const double med = nearest_rank(reps, 50);
    timings.push_back({ex.target.size(), med});
    medians.push_back(med);
    report.forward_counts.push_back(passes);
  }
  if (!medians.empty()) report.overall_median_ms = nearest_rank(medians, 50);
  report.buckets = bucket_by_length(timings, opt.edges);
  return report;
}

}  // namespace narsp
