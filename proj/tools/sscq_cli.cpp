/*
 * Copyright 2026 The sscq Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end: gen, import, train, index, query, eval, ablate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "run_manifest.hpp"
#include "sscq/config.hpp"
#include "sscq/data.hpp"
#include "sscq/eval.hpp"
#include "sscq/index.hpp"
#include "sscq/trainer.hpp"

namespace fs = std::filesystem;

namespace sscq::cli {
namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kFormat = 3, kNumeric = 4 };

std::string joined(const fs::path& dir, const char* name) { return (dir / name).string(); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---- Config assembly ----------------------------------------------------

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;  // key=value
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.path, "Key-value config file ([section] / key = value)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "Override one config key, e.g. --set loss.tau_ic=0.5");
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&args](std::uint64_t s) {
        args.seed = s;
        args.seed_given = true;
      },
      "Run seed (overrides train.seed)");
}

/// Defaults, then the config file, then --set, then --seed. Encoder input
/// and output widths follow the data and quantizer unless set explicitly.
RunConfig assemble_config(const ConfigArgs& args, std::size_t data_dim) {
  RunConfig cfg;
  std::set<std::string> explicit_keys;
  if (!args.path.empty()) explicit_keys = load_config_file(cfg, args.path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key(trim(std::string_view(kv).substr(0, eq)));
    set_config_value(cfg, key, std::string_view(kv).substr(eq + 1));
    explicit_keys.insert(key);
  }
  if (args.seed_given) cfg.train.seed = args.seed;
  if (!explicit_keys.count("encoder.input_dim")) cfg.model.encoder.input_dim = data_dim;
  if (!explicit_keys.count("encoder.embedding_dim")) {
    cfg.model.encoder.embedding_dim = cfg.model.quantizer.M * cfg.model.quantizer.sub_dim;
  }
  cfg.validate();
  return cfg;
}

std::vector<std::size_t> training_rows(const Dataset& data) {
  return data.indices_of({Split::train, Split::database});
}

// ---- gen ----------------------------------------------------------------

struct GenArgs {
  SyntheticConfig synth;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  RunManifest manifest("gen");
  const auto data = generate_synthetic(a.synth);
  save_dataset(data, a.out);
  manifest.set("classes", a.synth.num_classes);
  manifest.set("per_class", a.synth.per_class);
  manifest.set("dim", a.synth.input_dim);
  manifest.set("sep", a.synth.class_sep);
  manifest.set("noise", a.synth.noise);
  manifest.set("seed", a.synth.seed);
  manifest.set("queries_per_class", a.synth.queries_per_class);
  manifest.output(a.out);
  manifest.write(a.out + ".manifest.json");
  return kOk;
}

// ---- import -------------------------------------------------------------

struct ImportArgs {
  std::string csv, out, split = "database";
  std::size_t query_every = 0;
};

int cmd_import(const ImportArgs& a) {
  RunManifest manifest("import");
  CsvImportOptions opts;
  opts.split = parse_split(a.split);
  opts.query_every = a.query_every;
  const auto data = import_csv(a.csv, opts);
  save_dataset(data, a.out);
  manifest.input(a.csv);
  manifest.set("split", a.split);
  manifest.set("query_every", a.query_every);
  manifest.set("items", data.size());
  manifest.output(a.out);
  manifest.write(a.out + ".manifest.json");
  return kOk;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string data, out_dir;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  RunManifest manifest("train");
  const auto data = load_dataset(a.data);
  const auto cfg = assemble_config(a.config, data.input_dim);
  const UnlabeledView view(data, training_rows(data));
  const auto rendered = render_config(cfg);
  TrainOptions opts{a.out_dir, rendered, a.quiet ? nullptr : &std::cerr};
  const auto result = train(view, cfg.model, cfg.loss, cfg.train, cfg.augmentation(view), opts);
  manifest.input(a.data);
  manifest.config(rendered);
  manifest.set("seed", cfg.train.seed);
  manifest.set("training_items", view.size());
  manifest.outputs(result.written_files);
  manifest.write(joined(a.out_dir, "run_manifest.json"));
  return kOk;
}

// ---- index --------------------------------------------------------------

struct IndexArgs {
  std::string checkpoint, data, split = "database", out;
};

int cmd_index(const IndexArgs& a) {
  RunManifest manifest("index");
  const fs::path ckpt(a.checkpoint);
  const auto encoder = load_encoder(joined(ckpt, "encoder.bin"));
  const auto books = load_codebooks(joined(ckpt, "codebooks.bin"));
  const auto data = load_dataset(a.data);
  if (encoder.input_dim() != data.input_dim) {
    throw DimensionError("encoder expects " + std::to_string(encoder.input_dim()) + " features, " + a.data +
                         " has " + std::to_string(data.input_dim));
  }
  const auto rows = data.indices_of({parse_split(a.split)});
  const auto index = build_index(encoder, books, data, rows);
  const auto written = save_index(index, encoder, a.out);
  manifest.input(joined(ckpt, "encoder.bin"));
  manifest.input(joined(ckpt, "codebooks.bin"));
  manifest.input(a.data);
  manifest.set("split", a.split);
  manifest.set("items", index.size());
  manifest.outputs(written);
  manifest.write(joined(a.out, "run_manifest.json"));
  return kOk;
}

// ---- query --------------------------------------------------------------

struct QueryArgs {
  std::string index, vector_file, out = "query_results.csv";
  std::size_t k = 10, threads = 1;
};

RealMatrix read_vectors(const std::string& path, std::size_t dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<double> values;
  std::size_t rows = 0, offset = 0;
  for (std::string line; std::getline(in, line); offset += line.size() + 1) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cells = split(t, ',');
    if (cells.size() != dim) {
      throw FormatError(path, offset, "expected " + std::to_string(dim) + " values, got " +
                                          std::to_string(cells.size()));
    }
    for (const auto& c : cells) {
      const auto v = trim(c);
      double x = 0.0;
      const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
      if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw FormatError(path, offset, "not a number: '" + std::string(v) + "'");
      }
      values.push_back(x);
    }
    ++rows;
  }
  RealMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

int cmd_query(const QueryArgs& a) {
  RunManifest manifest("query");
  const auto loaded = load_index(a.index);
  const auto raw = read_vectors(a.vector_file, loaded.encoder.input_dim());
  const auto results = search_batch(loaded.index, encode(loaded.encoder, raw), a.k, a.threads);
  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + a.out);
  out << "query_id,rank,item_id,distance\n";
  for (std::size_t q = 0; q < results.size(); ++q) {
    for (std::size_t r = 0; r < results[q].hits.size(); ++r) {
      const auto& h = results[q].hits[r];
      out << q << ',' << r + 1 << ',' << h.item_id << ',' << format_double(h.distance) << '\n';
    }
  }
  out.close();
  if (!out) throw IoError("write failed: " + a.out);
  manifest.input(a.vector_file);
  manifest.set("index", a.index);
  manifest.set("k", a.k);
  manifest.set("threads", a.threads);
  manifest.output(a.out);
  manifest.write(a.out + ".manifest.json");
  return kOk;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
  std::string index, data, split = "query", out = "eval_report";
  std::size_t cutoff = 100, threads = 1;
  std::vector<std::size_t> k_list{1, 10, 50, 100};
};

int cmd_eval(const EvalArgs& a) {
  RunManifest manifest("eval");
  const auto loaded = load_index(a.index);
  const auto data = load_dataset(a.data);
  const auto queries = data.indices_of({parse_split(a.split)});
  const auto report = evaluate(loaded.index, loaded.encoder, data, queries, a.cutoff, a.k_list, a.threads);
  const auto written = write_report(report, a.out);
  std::cout << "mAP@" << a.cutoff << " = " << format_double(report.map) << " over " << queries.size()
            << " queries\n";
  manifest.input(a.data);
  manifest.set("index", a.index);
  manifest.set("split", a.split);
  manifest.set("cutoff", a.cutoff);
  manifest.set("k_list", a.k_list);
  manifest.outputs(written);
  manifest.write(joined(a.out, "run_manifest.json"));
  return kOk;
}

// ---- ablate -------------------------------------------------------------

struct AblateArgs {
  ConfigArgs config;
  std::string data, out = "ablation.csv";
  std::vector<std::string> grids{"terms"};
  std::vector<std::string> subsets;
  std::size_t seeds = 1, threads = 1;
  bool quiet = false;
};

struct Cell {
  std::string grid;
  std::string cell;
  RunConfig cfg;
};

/// Loss-term subsets of the component study, baseline first, full last.
const std::vector<std::string> kTermSubsets{"{icz}",     "{icz,pn}",     "{icz,pn,cd}",
                                            "{icz,icf}", "{icz,icf,cc}", "{icz,pn,cd,icf,cc}"};

std::vector<Cell> ablation_cells(const RunConfig& base, const AblateArgs& a) {
  std::vector<Cell> cells;
  for (const auto& grid : a.grids) {
    if (grid == "terms") {
      std::vector<std::string> rows = kTermSubsets;
      if (!a.subsets.empty()) rows = a.subsets;
      for (const auto& r : rows) {
        Cell c{grid, "", base};
        c.cfg.loss.terms = LossTerms::parse(r);
        c.cell = c.cfg.loss.terms.label();
        cells.push_back(c);
      }
    } else if (grid == "diversity") {
      for (auto v : {DiversityVariant::cosine_entropy, DiversityVariant::soft_quantization_entropy,
                     DiversityVariant::euclidean_entropy, DiversityVariant::squared_probability}) {
        Cell c{grid, std::string(to_string(v)), base};
        c.cfg.loss.diversity = v;
        cells.push_back(c);
      }
    } else if (grid == "fusion") {
      for (auto f : {Fusion::concatenate, Fusion::sum, Fusion::cross, Fusion::quantized_only}) {
        Cell c{grid, std::string(to_string(f)), base};
        c.cfg.loss.fusion = f;
        cells.push_back(c);
      }
    } else if (grid == "temperature") {
      for (const char* key : {"loss.tau_ic", "quantizer.tau_sq", "loss.tau_cc", "loss.tau_pn"}) {
        for (const char* value : {"0.1", "0.2", "0.5", "1"}) {
          Cell c{grid, std::string(key) + "=" + value, base};
          set_config_value(c.cfg, key, value);
          cells.push_back(c);
        }
      }
    } else {
      throw ConfigError("unknown ablation grid '" + grid + "' (terms, diversity, fusion, temperature)");
    }
  }
  return cells;
}

int cmd_ablate(const AblateArgs& a) {
  RunManifest manifest("ablate");
  Dataset data;
  if (a.data.empty()) {
    SyntheticConfig s;
    s.seed = a.config.seed;
    data = generate_synthetic(s);
    manifest.set("data", "synthetic default, seed " + std::to_string(s.seed));
  } else {
    data = load_dataset(a.data);
    manifest.input(a.data);
  }
  const auto base = assemble_config(a.config, data.input_dim);
  const auto cells = ablation_cells(base, a);
  const UnlabeledView view(data, training_rows(data));
  const auto db = data.indices_of({Split::database});
  const auto queries = data.indices_of({Split::query});

  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + a.out);
  out << "grid,cell,seed,map_at_" << base.eval.cutoff << '\n';
  for (const auto& cell : cells) {
    for (std::size_t s = 0; s < a.seeds; ++s) {
      RunConfig cfg = cell.cfg;
      cfg.train.seed = base.train.seed + s;
      cfg.validate();
      const auto result = train(view, cfg.model, cfg.loss, cfg.train, cfg.augmentation(view));
      const auto index = build_index(result.model.encoder, result.model.books, data, db);
      const auto report = evaluate(index, result.model.encoder, data, queries, cfg.eval.cutoff, {}, a.threads);
      out << cell.grid << ",\"" << cell.cell << "\"," << cfg.train.seed << ',' << format_double(report.map)
          << '\n';
      out.flush();
      if (!a.quiet) {
        std::cerr << cell.grid << ' ' << cell.cell << " seed " << cfg.train.seed << " mAP "
                  << format_double(report.map) << '\n';
      }
    }
  }
  out.close();
  if (!out) throw IoError("write failed: " + a.out);
  manifest.config(render_config(base));
  manifest.set("grids", a.grids);
  manifest.set("seeds", a.seeds);
  manifest.output(a.out);
  manifest.write(a.out + ".manifest.json");
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Self-supervised product-quantization retrieval toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a seeded synthetic clustered dataset");
  g->add_option("--classes", gen.synth.num_classes)->capture_default_str();
  g->add_option("--per-class", gen.synth.per_class)->capture_default_str();
  g->add_option("--dim", gen.synth.input_dim)->capture_default_str();
  g->add_option("--sep", gen.synth.class_sep)->capture_default_str();
  g->add_option("--noise", gen.synth.noise)->capture_default_str();
  g->add_option("--seed", gen.synth.seed)->capture_default_str();
  g->add_option("--queries-per-class", gen.synth.queries_per_class, "0 = per-class / 10");
  g->add_option("--out", gen.out)->required();

  ImportArgs imp;
  auto* im = app.add_subcommand("import", "Convert a CSV file (features..., labels) to a dataset");
  im->add_option("--csv", imp.csv)->required()->check(CLI::ExistingFile);
  im->add_option("--out", imp.out)->required();
  im->add_option("--split", imp.split, "Split tag for imported rows")->capture_default_str();
  im->add_option("--query-every", imp.query_every, "Tag every n-th row as query (0 = none)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train encoder and codebooks");
  t->add_option("--data", tr.data)->required()->check(CLI::ExistingFile);
  t->add_option("--out-dir", tr.out_dir)->required();
  add_config_options(t, tr.config);
  t->add_flag("--quiet", tr.quiet);

  IndexArgs ix;
  auto* x = app.add_subcommand("index", "Encode and quantize a dataset split into an index");
  x->add_option("--checkpoint", ix.checkpoint, "Training output directory")->required()->check(CLI::ExistingDirectory);
  x->add_option("--data", ix.data)->required()->check(CLI::ExistingFile);
  x->add_option("--split", ix.split)->capture_default_str();
  x->add_option("--out", ix.out)->required();

  QueryArgs qa;
  auto* q = app.add_subcommand("query", "Search an index with raw vectors (one CSV row each)");
  q->add_option("--index", qa.index)->required()->check(CLI::ExistingDirectory);
  q->add_option("--vector-file", qa.vector_file)->required()->check(CLI::ExistingFile);
  q->add_option("--k", qa.k)->capture_default_str()->check(CLI::PositiveNumber);
  q->add_option("--out", qa.out)->capture_default_str();
  q->add_option("--threads", qa.threads)->capture_default_str()->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Retrieval metrics for a query split against an index");
  e->add_option("--index", ev.index)->required()->check(CLI::ExistingDirectory);
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  e->add_option("--split", ev.split)->capture_default_str();
  e->add_option("--cutoff", ev.cutoff)->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--k-list", ev.k_list)->delimiter(',')->capture_default_str();
  e->add_option("--out", ev.out)->capture_default_str();
  e->add_option("--threads", ev.threads)->capture_default_str()->check(CLI::PositiveNumber);

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and score a grid of loss variants");
  a->add_option("--data", ab.data, "Dataset file (default: seeded synthetic)")->check(CLI::ExistingFile);
  a->add_option("--grid", ab.grids, "terms, diversity, fusion, temperature")->delimiter(',')->capture_default_str();
  a->add_option("--subsets", ab.subsets, "Loss-term subsets for the terms grid, ';'-separated")->delimiter(';');
  a->add_option("--seeds", ab.seeds, "Consecutive seeds per cell")->capture_default_str()->check(CLI::PositiveNumber);
  a->add_option("--out", ab.out)->capture_default_str();
  a->add_option("--threads", ab.threads)->capture_default_str()->check(CLI::PositiveNumber);
  add_config_options(a, ab.config);
  a->add_flag("--quiet", ab.quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (g->parsed()) return cmd_gen(gen);
  if (im->parsed()) return cmd_import(imp);
  if (t->parsed()) return cmd_train(tr);
  if (x->parsed()) return cmd_index(ix);
  if (q->parsed()) return cmd_query(qa);
  if (e->parsed()) return cmd_eval(ev);
  return cmd_ablate(ab);
}

}  // namespace
}  // namespace sscq::cli

int main(int argc, char** argv) {
  using namespace sscq;
  try {
    return cli::run(argc, argv);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return cli::kFormat;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return cli::kFormat;
  } catch (const CorruptCodeError& e) {
    std::cerr << "corrupt code: " << e.what() << '\n';
    return cli::kFormat;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return cli::kNumeric;
  } catch (const DegenerateInputError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return cli::kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return cli::kFailure;
  }
}
