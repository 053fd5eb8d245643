// Command-line entry point wiring preprocessing, the two training stages,
// evaluation, robustness, the confidence-quality analysis, and the
// hyperparameter sweep.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "qcmp/checkpoint.hpp"
#include "qcmp/collab_index.hpp"
#include "qcmp/config.hpp"
#include "qcmp/corpus.hpp"
#include "qcmp/evaluate.hpp"
#include "qcmp/svg_plot.hpp"
#include "qcmp/trainer.hpp"

namespace fs = std::filesystem;
using namespace qcmp;

namespace {

// Duplicates log lines to the run log and stdout.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    int r1 = a_ ? a_->sputc(static_cast<char>(c)) : c;
    int r2 = b_ ? b_->sputc(static_cast<char>(c)) : c;
    return r1 == EOF || r2 == EOF ? EOF : c;
  }
  int sync() override {
    int r1 = a_ ? a_->pubsync() : 0;
    int r2 = b_ ? b_->pubsync() : 0;
    return r1 == 0 && r2 == 0 ? 0 : -1;
  }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool force = false;
  int seed = -1;
  int epochs = -1;
  int batch_size = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
  cmd->add_option("--config", args.config_path, "config file (key = value lines)");
  cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
  if (with_out) {
    cmd->add_option("--out", args.out_dir, "run output directory")->required();
    cmd->add_flag("--force", args.force, "allow writing into a non-empty directory");
  }
  cmd->add_option("--seed", args.seed, "random seed override");
  cmd->add_option("--epochs", args.epochs, "epoch count override for the trained stage");
  cmd->add_option("--batch-size", args.batch_size, "batch size override");
}

Config resolve_config(const CommonArgs& args, const std::string& stage_for_epochs) {
  Config cfg = Config::defaults();
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
  if (args.epochs >= 0 && !stage_for_epochs.empty()) {
    cfg.set(stage_for_epochs, std::to_string(args.epochs));
  }
  if (args.batch_size >= 0) cfg.set("batch_size", std::to_string(args.batch_size));
  return cfg;
}

void prepare_run_dir(const std::string& out_dir, bool force, const Config& cfg) {
  fs::create_directories(out_dir);
  bool empty = fs::is_empty(out_dir);
  if (!empty && !force) {
    throw std::runtime_error("output directory '" + out_dir +
                             "' is not empty (pass --force to reuse it)");
  }
  std::ofstream snap(out_dir + "/config.resolved");
  snap << cfg.snapshot();
  std::ofstream seed(out_dir + "/seed.txt");
  seed << cfg.get_int("seed") << "\n";
}

struct DataBundle {
  InteractionCorpus corpus;
  std::vector<SplitSequence> splits;
};

DataBundle load_data(const Config& cfg) {
  const std::string& dir = cfg.get_str("data_dir");
  if (dir.empty()) throw std::runtime_error("config key 'data_dir' is required for this command");
  DataBundle d;
  d.corpus = load_corpus_dir(dir);
  d.splits = leave_one_out_split(d.corpus, cfg.get_int("max_raw_len"));
  uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
  int n = cfg.get_int("eval_negatives");
  for (auto& s : d.splits) sample_eval_negatives(s, d.corpus, n, seed);
  return d;
}

std::pair<TargetIndex, SimilarityIndex> build_indexes(const DataBundle& d, const Config& cfg) {
  TargetIndex tidx = build_target_index(d.splits);
  double sigma = cfg.get_real("sim_threshold");
  SimilarityIndex sidx;
  std::string cache = cfg.get_str("data_dir") + "/sim_index.cache";
  uint64_t hash = d.corpus.content_hash();
  if (!SimilarityIndex::load(cache, hash, sigma, sidx)) {
    sidx = build_similarity_candidates(d.splits, sigma);
    sidx.save(cache, hash);
  }
  return {std::move(tidx), std::move(sidx)};
}

void write_metrics(const std::string& path, const MetricReport& r) {
  std::ofstream out(path);
  out << r.to_tsv();
}

int run_preprocess(const CommonArgs& args, const std::string& input, const std::string& format) {
  Config cfg = resolve_config(args, "");
  prepare_run_dir(args.out_dir, args.force, cfg);
  InputFormat fmt;
  if (format == "triples") fmt = InputFormat::Triples;
  else if (format == "sequence-lines") fmt = InputFormat::SequenceLines;
  else throw std::runtime_error("unknown input format '" + format + "'");

  InteractionCorpus raw = load_interactions(input, fmt);
  InteractionCorpus filtered = five_core_filter(raw);
  save_corpus_dir(filtered, args.out_dir);
  CorpusStats s = corpus_stats(filtered);
  std::printf("users\t%d\nitems\t%d\nrecords\t%lld\navg_len\t%.4f\ndensity\t%.4f%%\n", s.users,
              s.items, s.records, s.avg_len, s.density * 100.0);
  return 0;
}

int run_pretrain(const CommonArgs& args, const std::string& resume_path) {
  Config cfg = resolve_config(args, "stage1_epochs");
  prepare_run_dir(args.out_dir, args.force, cfg);
  DataBundle data = load_data(cfg);
  auto [tidx, sidx] = build_indexes(data, cfg);
  TrainConfig tc = TrainConfig::from_config(cfg, data.corpus.num_items);

  std::ofstream log_file(args.out_dir + "/train.log");
  TeeBuf tee(log_file.rdbuf(), std::cout.rdbuf());
  std::ostream log(&tee);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = Checkpoint::load(resume_path);
    resume_ptr = &resume;
  }
  Stage1Result res = pretrain_stage1(data.splits, tidx, sidx, tc, cfg.snapshot(), args.out_dir,
                                     &log, resume_ptr);
  std::printf("stage1 best valid recon loss: %.6f (op_acc %.4f, ins_recall5 %.4f)\n",
              res.best_valid_loss, res.valid_op_accuracy, res.valid_insert_recall5);
  return 0;
}

int run_train(const CommonArgs& args, const std::string& stage1_path, const std::string& variant,
              const std::string& resume_path) {
  Config cfg = resolve_config(args, "stage2_epochs");
  if (!variant.empty()) cfg.set("variant", variant);
  prepare_run_dir(args.out_dir, args.force, cfg);
  DataBundle data = load_data(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg, data.corpus.num_items);

  TargetIndex tidx;
  SimilarityIndex sidx;
  if (tc.variant != Variant::Vanilla && tc.variant != Variant::Heuristic) {
    std::tie(tidx, sidx) = build_indexes(data, cfg);
  } else {
    sidx.candidates.resize(data.splits.size());
  }

  Checkpoint stage1;
  const Checkpoint* stage1_ptr = nullptr;
  if (!stage1_path.empty()) {
    stage1 = Checkpoint::load(stage1_path);
    stage1_ptr = &stage1;
  }
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = Checkpoint::load(resume_path);
    resume_ptr = &resume;
  }

  std::ofstream log_file(args.out_dir + "/train.log");
  TeeBuf tee(log_file.rdbuf(), std::cout.rdbuf());
  std::ostream log(&tee);

  Stage2Result res = train_stage2(data.splits, tidx, sidx, tc, stage1_ptr, cfg.snapshot(),
                                  args.out_dir, &log, resume_ptr);

  ModelParams best = model_from_checkpoint(res.best, tc.model);
  MetricReport valid = evaluate_model(best, data.splits, EvalSplit::Valid, tc.batch_size);
  MetricReport test = evaluate_model(best, data.splits, EvalSplit::Test, tc.batch_size);
  write_metrics(args.out_dir + "/valid_metrics.tsv", valid);
  write_metrics(args.out_dir + "/test_metrics.tsv", test);
  std::printf("best epoch %d, valid NDCG@10 %.4f\n", res.best_epoch, res.best_valid_ndcg10);
  std::printf("test metrics:\n%s", test.to_tsv().c_str());
  return 0;
}

int run_evaluate(const CommonArgs& args, const std::string& ckpt_path, const std::string& which) {
  Config cfg = resolve_config(args, "");
  prepare_run_dir(args.out_dir, args.force, cfg);
  DataBundle data = load_data(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg, data.corpus.num_items);
  Checkpoint ck = Checkpoint::load(ckpt_path);
  ModelParams model = model_from_checkpoint(ck, tc.model);

  if (which == "valid" || which == "both") {
    MetricReport r = evaluate_model(model, data.splits, EvalSplit::Valid, tc.batch_size);
    write_metrics(args.out_dir + "/valid_metrics.tsv", r);
    std::printf("valid:\n%s", r.to_tsv().c_str());
  }
  if (which == "test" || which == "both") {
    MetricReport r = evaluate_model(model, data.splits, EvalSplit::Test, tc.batch_size);
    write_metrics(args.out_dir + "/test_metrics.tsv", r);
    std::printf("test:\n%s", r.to_tsv().c_str());
  }
  return 0;
}

int run_robustness(const CommonArgs& args, const std::string& ckpt_path,
                   const std::string& ratio_str) {
  Config cfg = resolve_config(args, "");
  if (!ratio_str.empty()) {
    std::istringstream ss(ratio_str);
    std::string tok;
    std::vector<std::string> parts;
    while (std::getline(ss, tok, ',')) parts.push_back(tok);
    if (parts.size() != 3) throw std::runtime_error("--noise-ratio expects keep,delete,insert");
    cfg.set("noise_keep", parts[0]);
    cfg.set("noise_delete", parts[1]);
    cfg.set("noise_insert", parts[2]);
  }
  prepare_run_dir(args.out_dir, args.force, cfg);
  DataBundle data = load_data(cfg);
  TrainConfig tc = TrainConfig::from_config(cfg, data.corpus.num_items);
  Checkpoint ck = Checkpoint::load(ckpt_path);
  ModelParams model = model_from_checkpoint(ck, tc.model);

  NoiseRatio ratio{cfg.get_real("noise_keep"), cfg.get_real("noise_delete"),
                   cfg.get_real("noise_insert")};
  uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
  std::vector<SplitSequence> noisy;
  noisy.reserve(data.splits.size());
  for (const auto& s : data.splits) {
    noisy.push_back(simulate_noise(s, ratio, data.corpus.num_items, seed, tc.model.max_raw_len));
  }
  RobustnessReport r = robustness_eval(model, data.splits, noisy, tc.batch_size);
  std::ofstream out(args.out_dir + "/robustness.tsv");
  out << "set\t" << "HR@5\tHR@10\tHR@20\tMRR@5\tMRR@10\tMRR@20\tNDCG@5\tNDCG@10\tNDCG@20\tSum\n";
  auto line = [&out](const char* tag, const MetricReport& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\n", tag, m.hr5,
                  m.hr10, m.hr20, m.mrr5, m.mrr10, m.mrr20, m.ndcg5, m.ndcg10, m.ndcg20, m.sum());
    out << buf;
  };
  line("clean", r.clean);
  line("noisy", r.noisy);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "dist\t%.2f%%\n", r.dist * 100.0);
  out << buf;
  std::printf("clean sum %.4f, noisy sum %.4f, dist %.2f%%\n", r.clean.sum(), r.noisy.sum(),
              r.dist * 100.0);
  return 0;
}

int run_analyze(const CommonArgs& args, const std::string& ckpt_path, int max_anchors) {
  Config cfg = resolve_config(args, "");
  prepare_run_dir(args.out_dir, args.force, cfg);
  DataBundle data = load_data(cfg);
  auto [tidx, sidx] = build_indexes(data, cfg);
  TrainConfig tc = TrainConfig::from_config(cfg, data.corpus.num_items);

  Checkpoint ck = Checkpoint::load(ckpt_path);
  ModelParams frozen_model;
  AugmentParams frozen_aug;
  if (ck.stage == "stage1") {
    Stage1State s = stage1_from_checkpoint(ck, tc);
    frozen_model = std::move(s.model);
    frozen_aug = std::move(s.aug);
  } else if (!frozen_from_checkpoint(ck, tc.model, frozen_model, frozen_aug)) {
    throw std::runtime_error("checkpoint carries no augmentation module (vanilla/heuristic run?)");
  }

  CoocTable table(data.splits);
  QualityAnalysis qa =
      confidence_quality_analysis(frozen_model, frozen_aug, data.splits, tidx, sidx, tc.stage2_k,
                                  tc.seed, table, max_anchors);
  std::ofstream out(args.out_dir + "/analysis.tsv");
  out << "high_wins\tlow_wins\tties\twin_proportion\n";
  out << qa.high_wins << '\t' << qa.low_wins << '\t' << qa.ties << '\t' << qa.win_proportion()
      << '\n';
  long long decided = qa.high_wins + qa.low_wins;
  svg::write_bar_chart(args.out_dir + "/analysis.svg", {"high conf wins", "low conf wins"},
                       {decided > 0 ? static_cast<double>(qa.high_wins) / decided : 0.0,
                        decided > 0 ? static_cast<double>(qa.low_wins) / decided : 0.0},
                       "co-occurrence quality: win proportion by confidence");
  std::printf("high wins %lld, low wins %lld, ties %lld, win proportion %.4f\n", qa.high_wins,
              qa.low_wins, qa.ties, qa.win_proportion());
  return 0;
}

int run_sweep(const CommonArgs& args, const std::string& param, const std::string& stage1_path) {
  if (param != "alpha" && param != "beta" && param != "q_temp") {
    throw std::runtime_error("--param must be one of alpha, beta, q_temp");
  }
  Config base = resolve_config(args, "stage2_epochs");
  prepare_run_dir(args.out_dir, args.force, base);
  DataBundle data = load_data(base);
  auto [tidx, sidx] = build_indexes(data, base);

  Checkpoint stage1;
  const Checkpoint* stage1_ptr = nullptr;
  if (!stage1_path.empty()) {
    stage1 = Checkpoint::load(stage1_path);
    stage1_ptr = &stage1;
  }

  const std::vector<double> values = {0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<double> ndcg10s, sums;
  std::ofstream table(args.out_dir + "/sweep.tsv");
  table << param << "\ttest_ndcg10\ttest_sum\n";
  for (double v : values) {
    Config cfg = base;
    std::ostringstream vs;
    vs << v;
    cfg.set(param, vs.str());
    TrainConfig tc = TrainConfig::from_config(cfg, data.corpus.num_items);
    std::string sub = args.out_dir + "/" + param + "_" + vs.str();
    fs::create_directories(sub);
    std::ofstream snap(sub + "/config.resolved");
    snap << cfg.snapshot();
    std::ofstream log_file(sub + "/train.log");
    std::ostream log(log_file.rdbuf());
    Stage2Result res = train_stage2(data.splits, tidx, sidx, tc, stage1_ptr, cfg.snapshot(), sub,
                                    &log);
    ModelParams best = model_from_checkpoint(res.best, tc.model);
    MetricReport test = evaluate_model(best, data.splits, EvalSplit::Test, tc.batch_size);
    write_metrics(sub + "/test_metrics.tsv", test);
    ndcg10s.push_back(test.ndcg10);
    sums.push_back(test.sum());
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%g\t%.4f\t%.4f\n", v, test.ndcg10, test.sum());
    table << buf;
    std::printf("%s = %g -> test NDCG@10 %.4f\n", param.c_str(), v, test.ndcg10);
  }
  svg::write_line_chart(args.out_dir + "/sweep.svg", values, ndcg10s,
                        "test NDCG@10 vs " + param, param, "NDCG@10");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const char* det = std::getenv("QCMP_DETERMINISTIC");
  if (det != nullptr && std::string(det) == "0") {
    Eigen::setNbThreads(0);  // let Eigen pick; results may depend on scheduling
  } else {
    Eigen::setNbThreads(1);
  }

  CLI::App app{"QCMP-CL: quality-aware collaborative multi-positive contrastive recommender"};
  app.require_subcommand(1);

  CommonArgs pre_args, pretrain_args, train_args, eval_args, rob_args, ana_args, sweep_args;
  std::string pre_input, pre_format = "triples";
  std::string pretrain_resume;
  std::string train_stage1, train_variant, train_resume;
  std::string eval_ckpt, eval_which = "both";
  std::string rob_ckpt, rob_ratio;
  std::string ana_ckpt;
  int ana_max_anchors = 0;
  std::string sweep_param, sweep_stage1;

  CLI::App* pre = app.add_subcommand("preprocess", "ingest, 5-core filter, and persist a corpus");
  pre->add_option("--input", pre_input, "raw interaction file")->required();
  pre->add_option("--format", pre_format, "triples | sequence-lines");
  add_common(pre, pre_args);

  CLI::App* pretrain = app.add_subcommand("pretrain", "stage-one augmenter pre-training");
  add_common(pretrain, pretrain_args);
  pretrain->add_option("--resume", pretrain_resume, "resume from a stage-one checkpoint");
  pretrain->add_option("--sim-threshold",
                       [&pretrain_args](const std::vector<std::string>& v) {
                         pretrain_args.overrides.push_back("sim_threshold=" + v[0]);
                         return true;
                       },
                       "similarity threshold sigma");
  pretrain->add_option("--corrupt-probs",
                       [&pretrain_args](const std::vector<std::string>& v) {
                         std::istringstream ss(v[0]);
                         std::string tok;
                         std::vector<std::string> parts;
                         while (std::getline(ss, tok, ',')) parts.push_back(tok);
                         if (parts.size() != 3) return false;
                         pretrain_args.overrides.push_back("corrupt_keep=" + parts[0]);
                         pretrain_args.overrides.push_back("corrupt_delete=" + parts[1]);
                         pretrain_args.overrides.push_back("corrupt_insert=" + parts[2]);
                         return true;
                       },
                       "keep,delete,insert corruption probabilities");
  pretrain->add_option("--max-insert",
                       [&pretrain_args](const std::vector<std::string>& v) {
                         pretrain_args.overrides.push_back("max_insert=" + v[0]);
                         return true;
                       },
                       "maximum consecutive insertions");
  pretrain->add_option("--max-aug-len",
                       [&pretrain_args](const std::vector<std::string>& v) {
                         pretrain_args.overrides.push_back("max_aug_len=" + v[0]);
                         return true;
                       },
                       "maximum augmented sequence length");

  CLI::App* train = app.add_subcommand("train", "stage-two joint training");
  add_common(train, train_args);
  train->add_option("--stage1-ckpt", train_stage1, "stage-one checkpoint");
  train->add_option("--variant", train_variant,
                    "full | wo_lcl | wo_qa | w_col1 | w_col2 | heuristic | vanilla");
  train->add_option("--resume", train_resume, "resume from a stage-two checkpoint");

  CLI::App* eval = app.add_subcommand("evaluate", "rank the targets against fixed negatives");
  add_common(eval, eval_args);
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--which", eval_which, "valid | test | both");

  CLI::App* rob = app.add_subcommand("robustness", "clean vs simulated-noise evaluation");
  add_common(rob, rob_args);
  rob->add_option("--ckpt", rob_ckpt, "checkpoint to evaluate")->required();
  rob->add_option("--noise-ratio", rob_ratio, "keep,delete,insert (default 0.4,0.3,0.3)");

  CLI::App* ana = app.add_subcommand("analyze", "confidence vs co-occurrence quality analysis");
  add_common(ana, ana_args);
  ana->add_option("--ckpt", ana_ckpt, "stage-one (or full stage-two) checkpoint")->required();
  ana->add_option("--max-anchors", ana_max_anchors, "cap on analyzed anchors (0 = all)");

  CLI::App* sweep = app.add_subcommand("sweep", "grid over alpha, beta, or q_temp");
  add_common(sweep, sweep_args);
  sweep->add_option("--param", sweep_param, "alpha | beta | q_temp")->required();
  sweep->add_option("--stage1-ckpt", sweep_stage1, "stage-one checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (pre->parsed()) return run_preprocess(pre_args, pre_input, pre_format);
    if (pretrain->parsed()) return run_pretrain(pretrain_args, pretrain_resume);
    if (train->parsed()) return run_train(train_args, train_stage1, train_variant, train_resume);
    if (eval->parsed()) return run_evaluate(eval_args, eval_ckpt, eval_which);
    if (rob->parsed()) return run_robustness(rob_args, rob_ckpt, rob_ratio);
    if (ana->parsed()) return run_analyze(ana_args, ana_ckpt, ana_max_anchors);
    if (sweep->parsed()) return run_sweep(sweep_args, sweep_param, sweep_stage1);
  } catch (const TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
