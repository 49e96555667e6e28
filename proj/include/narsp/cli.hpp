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

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "narsp/bench.hpp"
#include "narsp/checkpoint.hpp"
#include "narsp/config.hpp"
#include "narsp/data.hpp"
#include "narsp/error.hpp"
#include "narsp/inference.hpp"
#include "narsp/toy.hpp"
#include "narsp/trainer.hpp"

namespace narsp {

inline json to_json(const Candidate& c) {
  return json{{"tree", c.text()},
              {"length", c.length},
              {"length_prob", c.length_prob},
              {"score", c.score},
              {"token_probs", c.token_probs}};
}

inline json to_json(const Prediction& p) {
  json cands = json::array();
  for (const auto& c : p.candidates) cands.push_back(to_json(c));
  return json{{"source", join(p.source)},
              {"tree", p.best.text()},
              {"score", p.best.score},
              {"length", p.best.length},
              {"length_prob", p.best.length_prob},
              {"forward_passes", p.forward_passes},
              {"candidates", cands}};
}

namespace detail {

inline std::string resolve_near(const std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).string();
}

/// Utterances, one per line; a tab-separated line contributes its first column.
inline std::vector<std::vector<std::string>> read_utterances(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  for_each_line(read_file(path), [&out](std::string_view line, std::size_t) {
    out.push_back(tokenize(line.substr(0, line.find('\t'))));
  });
  return out;
}

inline void emit(const std::string& out_path, const std::string& text, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    write_file(out_path, text);
  }
}

inline std::optional<Variant> parse_mode(const std::string& mode) {
  if (mode.empty()) return std::nullopt;
  return parse_variant(mode);
}

}  // namespace detail

/// Entry point of the command-line tool. Returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Non-autoregressive convolutional semantic parser"};
  app.require_subcommand(1);

  std::string config_path, snapshot, data, out_path, mode, toy_config;
  std::optional<std::uint64_t> seed;
  std::size_t k = 5, reps = 20, warmup = 5, n = 100;
  std::vector<std::size_t> edges{10, 20, 30, 40};

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--out", out_path, "Output directory for best.ckpt and history.jsonl")->required();
  train->add_option("--seed", seed, "Override train.seed");
  train->add_option("--mode", mode, "Override model.variant (nar|ar)");

  auto* eval = app.add_subcommand("eval", "Evaluate a snapshot on a TSV file");
  eval->add_option("--snapshot", snapshot)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--k", k, "Length beam size");
  eval->add_option("--out", out_path, "Write metrics here instead of stdout");

  auto* predict = app.add_subcommand("predict", "Parse utterances, one per line");
  predict->add_option("--snapshot", snapshot)->required();
  predict->add_option("--data", data)->required();
  predict->add_option("--k", k, "Length beam size");
  predict->add_option("--out", out_path, "Write JSONL here instead of stdout");

  auto* bench = app.add_subcommand("bench", "Latency benchmark by target length");
  bench->add_option("--snapshot", snapshot)->required();
  bench->add_option("--data", data)->required();
  bench->add_option("--k", k, "Length beam size");
  bench->add_option("--reps", reps, "Timed repetitions per example");
  bench->add_option("--warmup", warmup, "Untimed repetitions per example");
  bench->add_option("--edges", edges, "Bucket edges on target length")->delimiter(',');
  bench->add_option("--mode", mode, "Expected variant of the snapshot (nar|ar)");
  bench->add_option("--out", out_path, "Write the report here instead of stdout");

  auto* validate = app.add_subcommand("validate", "Check every row of a TSV file");
  validate->add_option("--data", data)->required();

  auto* gentoy = app.add_subcommand("gentoy", "Sample a synthetic TSV dataset");
  gentoy->add_option("--seed", seed, "Generator seed")->required();
  gentoy->add_option("--n", n, "Number of examples");
  gentoy->add_option("--config", toy_config, "Grammar spec (JSON); defaults to the built-in grammar");
  gentoy->add_option("--out", out_path, "Write TSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) {
      const std::filesystem::path cfg_path(config_path);
      RunConfig rc = run_config_from_json(parse_json(read_file(config_path), config_path));
      if (seed) rc.train.seed = *seed;
      if (auto v = detail::parse_mode(mode)) rc.model.variant = *v;
      rc.model.validate();
      rc.train.validate();
      const auto base = cfg_path.parent_path();
      if (rc.data.train.empty() || rc.data.val.empty()) {
        throw Error(ErrorCode::BadConfig, "data.train and data.val are required");
      }
      const auto train_set = read_tsv(detail::resolve_near(rc.data.train, base));
      const auto val_set = read_tsv(detail::resolve_near(rc.data.val, base));
      Model<float> model(rc.model, Vocabulary::build(train_set, rc.train.min_count), rc.train.seed);
      FitResult res = fit(model, train_set, val_set, rc.train, [&err](const EpochRecord& r) {
        err << "epoch " << r.epoch << " loss " << r.train_loss << " val_em " << r.val_em << "\n";
      });
      std::filesystem::create_directories(out_path);
      const std::filesystem::path dir(out_path);
      write_file((dir / "best.ckpt").string(), res.best.bytes);
      write_file((dir / "history.jsonl").string(), history_jsonl(res.history));
      out << "best epoch " << res.best.epoch << " val_em " << res.best.val_em << " params "
          << model.count_parameters() << "\n";
      return 0;
    }
    if (*eval) {
      auto ck = load_checkpoint<float>(snapshot);
      const EvalMetrics m = evaluate(ck.model, read_tsv(data), k);
      detail::emit(out_path, to_json(m).dump(2) + "\n", out);
      return 0;
    }
    if (*predict) {
      auto ck = load_checkpoint<float>(snapshot);
      DecodeConfig dc;
      dc.k = k;
      std::string text;
      for (const auto& p : predict_batch(ck.model, detail::read_utterances(data), dc)) {
        text += to_json(p).dump() + "\n";
      }
      detail::emit(out_path, text, out);
      return 0;
    }
    if (*bench) {
      auto ck = load_checkpoint<float>(snapshot);
      if (auto v = detail::parse_mode(mode); v && *v != ck.model.config().variant) {
        throw Error(ErrorCode::WrongVariant, "snapshot is " + std::string(to_string(ck.model.config().variant)));
      }
      DecodeConfig dc;
      dc.k = k;
      BenchOptions opt;
      opt.reps = reps;
      opt.warmup = warmup;
      opt.edges = edges;
      const BenchReport r = bench_latency(ck.model, read_tsv(data), dc, opt);
      detail::emit(out_path, to_json(r).dump(2) + "\n", out);
      return 0;
    }
    if (*validate) {
      const TsvReport rep = validate_tsv_text(read_file(data));
      for (const auto& b : rep.bad) out << b.message << "\n";
      out << rep.rows << " rows, " << rep.bad.size() << " bad rows\n";
      return rep.bad.empty() ? 0 : 1;
    }
    if (*gentoy) {
      const ToyGrammarSpec spec =
          toy_config.empty() ? ToyGrammarSpec::defaults() : toy_spec_from_json(parse_json(read_file(toy_config), toy_config));
      detail::emit(out_path, to_tsv(gen_toy(spec, *seed, n)), out);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace narsp
