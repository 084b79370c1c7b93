// sfnet: generate synthetic corpora, train, evaluate, sweep and gradient-check.
//
// Exit codes: 0 ok, 1 user error (bad flags, files or configs), 2 internal
// error (including a failed gradient check).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sfnet/sfnet.hpp"

namespace {

using namespace sfnet;

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

std::string read_text(const std::string& path) {
  return sfnet::detail::read_file(path);
}

void write_text(const std::string& path, const std::string& text) {
  sfnet::detail::write_file(path, text);
}

TrainConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) apply_config_text(cfg, read_text(config_path));
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::string default_log_path(const std::string& checkpoint) {
  if (const char* dir = std::getenv("SFNET_LOG_DIR"); dir && *dir) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / "train_log.csv").string();
  }
  return checkpoint + ".log.csv";
}

void print_corpus_summary(const FeatureCorpus& corpus, std::ostream& out) {
  std::map<int, std::size_t> histogram;
  std::size_t segments = 0, train = 0, test = 0, frames = 0;
  for (const Video& v : corpus.videos) {
    (v.split == "train" ? train : test) += 1;
    frames += v.length;
    for (const Segment& s : v.segments) {
      ++segments;
      ++histogram[s.label];
    }
  }
  out << "videos: " << corpus.videos.size() << " (train " << train << ", test " << test << ")\n"
      << "frames: " << frames << "\n"
      << "segments: " << segments << "\n"
      << "feature_dim: " << corpus.feature_dim << "\n"
      << "classes:";
  for (const auto& [label, count] : histogram) out << " " << label << ":" << count;
  out << "\n";
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("sweep value '" + item + "' is not a number");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SF-Net single-frame supervised temporal action localization"};
  app.require_subcommand(1);

  // gen
  std::string gen_spec, gen_out, gen_gt_csv, gen_ann_csv, gen_strategy = "human_like";
  std::vector<std::string> gen_sets;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic feature corpus");
  gen->add_option("--spec", gen_spec, "Synthetic spec file (key = value lines)");
  gen->add_option("--set", gen_sets, "Spec override key=value (repeatable)");
  gen->add_option("--out", gen_out, "Output corpus file")->required();
  gen->add_option("--gt-csv", gen_gt_csv, "Also write ground-truth segments as CSV");
  gen->add_option("--annotations-csv", gen_ann_csv, "Also write single-frame annotations as CSV");
  gen->add_option("--strategy", gen_strategy, "Annotation strategy for --annotations-csv");

  // train
  std::string corpus_path, config_path, ckpt_out, log_path, ann_path;
  std::vector<std::string> sets;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a model on the train split");
  train->add_option("--corpus", corpus_path, "Corpus file")->required();
  train->add_option("--config", config_path, "Training config file (key = value lines)");
  train->add_option("--set", sets, "Config override key=value (repeatable)");
  train->add_option("--out", ckpt_out, "Checkpoint output path")->required();
  train->add_option("--log", log_path,
                    "Training log CSV (default $SFNET_LOG_DIR/train_log.csv or <out>.log.csv)");
  train->add_option("--annotations", ann_path,
                    "Annotation CSV replacing the corpus annotations of the chosen strategy");
  train->add_flag("--quiet", quiet, "Do not print progress");

  // eval
  std::string ckpt_in, report_out, seg_out, det_out, split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--corpus", corpus_path, "Corpus file")->required();
  eval->add_option("--checkpoint", ckpt_in, "Checkpoint file")->required();
  eval->add_option("--config", config_path, "Config file (inference settings)");
  eval->add_option("--set", sets, "Config override key=value (repeatable)");
  eval->add_option("--split", split, "Split to evaluate");
  eval->add_option("--out", report_out, "Report CSV path (default stdout)");
  eval->add_option("--segments", seg_out, "Write predicted segments CSV");
  eval->add_option("--detections", det_out, "Write single-frame detections CSV");

  // sweep
  std::string sweep_param, sweep_values, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over one hyper-parameter");
  sweep->add_option("--corpus", corpus_path, "Corpus file")->required();
  sweep->add_option("--config", config_path, "Base config file");
  sweep->add_option("--set", sets, "Config override key=value (repeatable)");
  sweep->add_option("--param", sweep_param, "eta, alpha, beta or theta")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  sweep->add_option("--out", sweep_out, "Table CSV path (default stdout)");

  // gradcheck
  GradcheckSetup gc;
  bool inject_bug = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
  gradcheck->add_option("--videos", gc.videos, "N (<= 2)");
  gradcheck->add_option("--frames", gc.frames, "T (<= 12)");
  gradcheck->add_option("--dim", gc.feature_dim, "D (<= 6)");
  gradcheck->add_option("--classes", gc.num_classes, "Nc");
  gradcheck->add_option("--hidden", gc.hidden, "H");
  gradcheck->add_option("--seed", gc.seed, "Seed");
  gradcheck->add_option("--tolerance", gc.tolerance, "Max relative error");
  gradcheck->add_flag("--inject-bug", inject_bug, "Corrupt one analytic gradient entry (test fixture)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    if (gen->parsed()) {
      SyntheticSpec spec;
      if (!gen_spec.empty()) apply_spec_text(spec, read_text(gen_spec));
      for (const auto& s : gen_sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not key=value");
        apply_spec_setting(spec, s.substr(0, eq), s.substr(eq + 1));
      }
      const FeatureCorpus corpus = generate_corpus(spec);
      save_corpus(corpus, gen_out);
      if (!gen_gt_csv.empty()) {
        std::vector<Segment> gt;
        for (const Video& v : corpus.videos) gt.insert(gt.end(), v.segments.begin(), v.segments.end());
        write_text(gen_gt_csv, csv::write_ground_truth(corpus, gt));
      }
      if (!gen_ann_csv.empty()) {
        parse_strategy(gen_strategy);
        std::vector<FrameAnnotation> rows;
        for (const Video& v : corpus.videos) {
          const auto& list = v.annotations.at(gen_strategy);
          rows.insert(rows.end(), list.begin(), list.end());
        }
        write_text(gen_ann_csv, csv::write_annotations(corpus, rows));
      }
      print_corpus_summary(corpus, std::cout);
      return kExitOk;
    }

    if (train->parsed()) {
      const TrainConfig cfg = load_config(config_path, sets);
      FeatureCorpus corpus = load_corpus(corpus_path);
      if (!ann_path.empty()) {
        for (Video& v : corpus.videos) v.annotations[cfg.strategy].clear();
        for (const FrameAnnotation& a : csv::read_annotations(corpus, read_text(ann_path))) {
          corpus.videos[a.video].annotations[cfg.strategy].push_back(a);
        }
      }
      const auto result = train_any(corpus, cfg, [&](const TrainLogRow& r) {
        if (!quiet && (r.iteration % 50 == 0 || r.iteration == 1)) {
          std::cerr << "iter " << r.iteration << " total " << r.loss.total << "\n";
        }
      });
      save_checkpoint(ckpt_out, result.params,
                      {{"seed", std::to_string(cfg.seed)},
                       {"config_hash", std::to_string(config_hash(cfg))},
                       {"iterations", std::to_string(result.log.size())}});
      write_text(log_path.empty() ? default_log_path(ckpt_out) : log_path,
                 training_log_csv(result.log));
      return kExitOk;
    }

    if (eval->parsed()) {
      const TrainConfig cfg = load_config(config_path, sets);
      const FeatureCorpus corpus = load_corpus(corpus_path);
      const Checkpoint ck = load_checkpoint(ckpt_in);
      const EvalOutcome out = evaluate(corpus, ck.params, cfg, split);
      if (!seg_out.empty()) write_text(seg_out, csv::write_segments(corpus, out.predictions.segments));
      if (!det_out.empty()) {
        write_text(det_out, csv::write_detections(corpus, out.predictions.detections));
      }
      const std::string report = out.report.to_csv();
      if (report_out.empty()) std::cout << report;
      else write_text(report_out, report);
      return kExitOk;
    }

    if (sweep->parsed()) {
      const TrainConfig cfg = load_config(config_path, sets);
      const FeatureCorpus corpus = load_corpus(corpus_path);
      const std::string table = sweep_csv(corpus, cfg, sweep_param, parse_values(sweep_values));
      if (sweep_out.empty()) std::cout << table;
      else write_text(sweep_out, table);
      return kExitOk;
    }

    if (gradcheck->parsed()) {
      std::function<void(std::vector<Tensor<double>>&)> tamper;
      if (inject_bug) tamper = [](std::vector<Tensor<double>>& g) { g[0][0] += 0.1; };
      const GradcheckOutcome out = run_full_gradcheck(gc, tamper);
      const auto& names = SFNetParams<double>::names();
      for (std::size_t i = 0; i < names.size(); ++i) {
        std::cout << names[i] << " max_rel_err " << out.report.max_rel_error[i] << "\n";
      }
      std::cout << "labeled_frames " << out.labeled_frames << " background_frames "
                << out.background_frames << "\n";
      std::cout << (out.report.passed ? "PASS" : "FAIL") << " worst " << out.report.worst << " at "
                << out.worst_name << "[" << out.report.worst_entry << "] analytic "
                << out.report.worst_analytic << " numeric " << out.report.worst_numeric << "\n";
      return out.report.passed ? kExitOk : kExitInternal;
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
