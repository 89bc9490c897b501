// mermix: synthetic data, training, evaluation and cross-validation for the
// audio/text cross-attention fusion network.
//
// Exit codes: 0 success, 1 check failure or runtime error, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mermix/data_io.hpp"
#include "mermix/eval_cv.hpp"
#include "mermix/fusion_model.hpp"
#include "mermix/gradcheck.hpp"
#include "mermix/trainer.hpp"

namespace fs = std::filesystem;
using namespace mermix;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelFlags {
  int heads = 8;
  int layers = 1;
  std::string fusion = "ca";
  std::string modality = "both";
  bool output_projection = true;
  double dropout = 0.0;
  CLI::Option* heads_opt = nullptr;
  CLI::Option* fusion_opt = nullptr;
};

struct TrainFlags {
  std::string preset = "default";
  double lr = 1e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 16;
  int epochs = 0;
  double lambda_main = 1.0;
  double lambda_aux1 = 1.0;
  double lambda_aux2 = 1.0;
  bool aux1 = false;
  bool aux2 = false;
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
  CLI::Option* lr_opt = nullptr;
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  m.heads_opt = cmd->add_option("--heads", m.heads, "Attention heads H (C must be divisible by H)");
  cmd->add_option("--layers", m.layers, "Cross-attention layers K")->check(CLI::PositiveNumber);
  m.fusion_opt = cmd->add_option("--fusion", m.fusion, "Fusion: ca (cross-attention) or fc (pooled concat + FC)")
                     ->check(CLI::IsMember({"ca", "fc"}));
  cmd->add_option("--modality", m.modality, "Inputs: audio, text or both")
      ->check(CLI::IsMember({"audio", "text", "both"}));
  cmd->add_option("--use-output-projection", m.output_projection, "Mix heads with W_O (true/false)");
  cmd->add_option("--dropout", m.dropout, "Dropout on attention weights during training");
}

void add_train_flags(CLI::App* cmd, TrainFlags& t, bool epochs_required) {
  cmd->add_option("--preset", t.preset, "default (lr 1e-5, 8 heads) or synthetic (lr 1e-3, 2 heads)")
      ->check(CLI::IsMember({"default", "synthetic"}));
  t.lr_opt = cmd->add_option("--lr", t.lr, "AdamW learning rate");
  cmd->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
  cmd->add_option("--beta1", t.beta1);
  cmd->add_option("--beta2", t.beta2);
  cmd->add_option("--eps", t.eps);
  cmd->add_option("--batch-size", t.batch_size)->check(CLI::PositiveNumber);
  auto* epochs = cmd->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  if (epochs_required) epochs->required();
  cmd->add_option("--lambda-main", t.lambda_main, "Weight of the emotion loss");
  cmd->add_option("--lambda-aux1", t.lambda_aux1, "Weight of the recombination loss");
  cmd->add_option("--lambda-aux2", t.lambda_aux2, "Weight of the same-emotion replacement loss");
  cmd->add_flag("--aux1", t.aux1, "Enable auxiliary task 1 (modality recombination)");
  cmd->add_flag("--aux2", t.aux2, "Enable auxiliary task 2 (same-emotion replacement)");
  cmd->add_option("--grad-clip", t.grad_clip, "Global gradient norm clip (0 = off)");
  cmd->add_option("--seed", t.seed, "Master seed");
}

FusionConfig resolve_model(const ModelFlags& m, const TrainFlags& t, const Dataset& data) {
  FusionConfig cfg;
  cfg.feature_dim = static_cast<int>(data.feature_dim());
  cfg.num_emotions = std::max(2, data.num_emotions());
  cfg.num_heads = (t.preset == "synthetic" && m.heads_opt->count() == 0) ? 2 : m.heads;
  cfg.num_layers = m.layers;
  cfg.modality = parse_modality_use(m.modality);
  if (cfg.modality != ModalityUse::both) {
    if (m.fusion_opt->count() > 0 && m.fusion == "ca") {
      throw UsageError("--fusion ca needs both modalities; use --fusion fc with --modality " + m.modality);
    }
    cfg.fusion = FusionKind::concat_fc;
  } else {
    cfg.fusion = parse_fusion_kind(m.fusion);
  }
  if (cfg.modality != ModalityUse::both && (t.aux1 || t.aux2)) {
    throw UsageError("--aux1/--aux2 need both modalities, conflicting with --modality " + m.modality);
  }
  cfg.use_output_projection = m.output_projection;
  cfg.dropout_rate = m.dropout;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

TrainConfig resolve_train(const TrainFlags& t) {
  TrainConfig cfg;
  cfg.adamw.learning_rate = (t.preset == "synthetic" && t.lr_opt->count() == 0) ? 1e-3 : t.lr;
  cfg.adamw.weight_decay = t.weight_decay;
  cfg.adamw.beta1 = t.beta1;
  cfg.adamw.beta2 = t.beta2;
  cfg.adamw.epsilon = t.eps;
  cfg.batch_size = t.batch_size;
  cfg.epochs = t.epochs;
  cfg.lambda_main = t.lambda_main;
  cfg.lambda_aux1 = t.lambda_aux1;
  cfg.lambda_aux2 = t.lambda_aux2;
  cfg.enable_aux1 = t.aux1;
  cfg.enable_aux2 = t.aux2;
  if (t.grad_clip > 0) cfg.grad_clip_norm = t.grad_clip;
  cfg.seed = t.seed;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::string to_kv(const TrainConfig& t) {
  std::ostringstream os;
  os.precision(17);
  os << "learning_rate=" << t.adamw.learning_rate << "\n"
     << "weight_decay=" << t.adamw.weight_decay << "\n"
     << "beta1=" << t.adamw.beta1 << "\n"
     << "beta2=" << t.adamw.beta2 << "\n"
     << "epsilon=" << t.adamw.epsilon << "\n"
     << "batch_size=" << t.batch_size << "\n"
     << "epochs=" << t.epochs << "\n"
     << "lambda_main=" << t.lambda_main << "\n"
     << "lambda_aux1=" << t.lambda_aux1 << "\n"
     << "lambda_aux2=" << t.lambda_aux2 << "\n"
     << "enable_aux1=" << (t.enable_aux1 ? "true" : "false") << "\n"
     << "enable_aux2=" << (t.enable_aux2 ? "true" : "false") << "\n"
     << "grad_clip_norm=" << (t.grad_clip_norm ? *t.grad_clip_norm : 0.0) << "\n"
     << "seed=" << t.seed << "\n";
  return os.str();
}

std::string to_kv(const SynthConfig& s, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(17);
  os << "mode=" << (s.mode == SynthMode::additive ? "additive" : "xor") << "\n"
     << "num_emotions=" << s.num_emotions << "\n"
     << "feature_dim=" << s.feature_dim << "\n"
     << "min_steps=" << s.min_steps << "\n"
     << "max_steps=" << s.max_steps << "\n"
     << "audio_signal=" << s.audio_signal << "\n"
     << "text_signal=" << s.text_signal << "\n"
     << "noise=" << s.noise << "\n"
     << "per_class_per_session=" << s.per_class_per_session << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

void print_config_block(const std::string& title, const std::string& kv) {
  std::cout << "# " << title << "\n" << kv;
}

void print_class_counts(const Dataset& data) {
  const DatasetMeta meta = describe(data);
  for (int c = 0; c < meta.num_emotions; ++c) {
    std::cout << "class " << c << " (" << meta.class_names[static_cast<std::size_t>(c)]
              << "): " << meta.class_counts[static_cast<std::size_t>(c)] << "\n";
  }
}

void print_confusion(const ConfusionMatrix& cm) {
  std::cout << "confusion (rows=true, cols=pred):\n";
  for (int r = 0; r < cm.num_classes(); ++r) {
    for (int c = 0; c < cm.num_classes(); ++c) std::cout << (c ? " " : "  ") << cm.count(r, c);
    std::cout << "\n";
  }
}

std::vector<std::size_t> indices_where(const Dataset& data, const std::function<bool(const Utterance&)>& keep) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep(data.utterances[i])) out.push_back(i);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mermix: audio/text cross-attention fusion for emotion recognition"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic MEF1 dataset");
  std::string synth_mode = "additive";
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  SynthConfig sc;
  synth->add_option("--mode", synth_mode, "additive or xor")->check(CLI::IsMember({"additive", "xor"}));
  synth->add_option("--out", synth_out, "Output MEF1 path")->required();
  synth->add_option("--seed", synth_seed);
  synth->add_option("--per-class", sc.per_class_per_session, "Utterances per class per session");
  synth->add_option("--emotions", sc.num_emotions, "Number of classes E (xor forces 2)");
  synth->add_option("--dim", sc.feature_dim, "Feature dimension C");
  synth->add_option("--tmin", sc.min_steps);
  synth->add_option("--tmax", sc.max_steps);
  synth->add_option("--sa", sc.audio_signal, "Audio informativeness in [0,1]");
  synth->add_option("--st", sc.text_signal, "Text informativeness in [0,1]");
  synth->add_option("--sigma", sc.noise, "Frame noise standard deviation");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on a MEF1 dataset and write a checkpoint");
  ModelFlags train_model;
  TrainFlags train_flags;
  std::string train_data, train_out, train_log;
  int holdout = 0;
  train_cmd->add_option("--data", train_data, "MEF1 dataset")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "Per-epoch JSON-lines log");
  train_cmd->add_option("--holdout-session", holdout, "Exclude this session from training (0 = none)")
      ->check(CLI::Range(0, kNumSessions));
  add_model_flags(train_cmd, train_model);
  add_train_flags(train_cmd, train_flags, true);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (WA/UA)");
  std::string eval_data, eval_ckpt;
  int eval_session = 0;
  eval_cmd->add_option("--data", eval_data, "MEF1 dataset")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint from train")->required();
  eval_cmd->add_option("--session", eval_session, "Evaluate only this session (0 = all)")
      ->check(CLI::Range(0, kNumSessions));

  // cv
  auto* cv_cmd = app.add_subcommand("cv", "Leave-one-session-out 5-fold cross-validation");
  ModelFlags cv_model;
  TrainFlags cv_flags;
  std::string cv_data, cv_out;
  unsigned cv_threads = 0;
  cv_cmd->add_option("--data", cv_data, "MEF1 dataset")->required();
  cv_cmd->add_option("--out-dir", cv_out, "Directory for cv_report.txt / cv_report.jsonl")->required();
  cv_cmd->add_option("--threads", cv_threads, "Fold threads (default MERMIX_THREADS or all cores)");
  add_model_flags(cv_cmd, cv_model);
  add_train_flags(cv_cmd, cv_flags, true);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  GradcheckOptions gc;
  gc_cmd->add_option("--use-output-projection", gc.model.use_output_projection);
  gc_cmd->add_option("--layers", gc.model.num_layers)->check(CLI::PositiveNumber);
  gc_cmd->add_option("--heads", gc.model.num_heads)->check(CLI::PositiveNumber);
  gc_cmd->add_option("--seed", gc.seed);
  gc_cmd->add_flag("--break-grad", gc.break_grad, "Sabotage the softmax backward rule (debug)");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Dump MEF1 record headers and per-class/session counts");
  std::string inspect_path;
  bool inspect_summary = false;
  inspect_cmd->add_option("file", inspect_path, "MEF1 file")->required();
  inspect_cmd->add_flag("--summary", inspect_summary, "Counts only, no per-record lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      sc.mode = synth_mode == "xor" ? SynthMode::xor_bits : SynthMode::additive;
      if (sc.mode == SynthMode::xor_bits) sc.num_emotions = 2;
      try {
        sc.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      print_config_block("synth", to_kv(sc, synth_seed));
      const Dataset data = synth_generate(sc, synth_seed);
      write_features(data, synth_out);
      nlohmann::ordered_json manifest;
      manifest["format"] = "MEF1";
      manifest["mode"] = synth_mode;
      manifest["seed"] = synth_seed;
      manifest["audio_informativeness"] = sc.audio_signal;
      manifest["text_informativeness"] = sc.text_signal;
      manifest["noise"] = sc.noise;
      manifest["feature_dim"] = sc.feature_dim;
      manifest["num_emotions"] = sc.num_emotions;
      manifest["utterances"] = data.size();
      const DatasetMeta meta = describe(data);
      for (int c = 0; c < meta.num_emotions; ++c) {
        manifest["class_counts"][meta.class_names[static_cast<std::size_t>(c)]] =
            meta.class_counts[static_cast<std::size_t>(c)];
      }
      std::ofstream(synth_out + ".json") << manifest.dump(2) << "\n";
      print_class_counts(data);
      std::cout << "text informativeness " << sc.text_signal << ", audio informativeness " << sc.audio_signal
                << "\nwrote " << data.size() << " utterances to " << synth_out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const Dataset data = read_features(train_data);
      const FusionConfig cfg = resolve_model(train_model, train_flags, data);
      const TrainConfig tcfg = resolve_train(train_flags);
      print_config_block("model", to_kv(cfg));
      print_config_block("train", to_kv(tcfg));
      std::cout << "holdout_session=" << holdout << "\n";
      const auto indices = indices_where(data, [&](const Utterance& u) { return u.session != holdout; });
      std::ofstream log;
      if (!train_log.empty()) log.open(train_log);
      const TrainResult result = train(data, indices, cfg, tcfg, [&](const EpochRecord& rec) {
        const std::string line = to_json_line(rec);
        std::cout << line << "\n";
        if (log.is_open()) log << line << "\n";
      });
      save_checkpoint(result.params, cfg, train_out);
      std::cout << "wrote checkpoint " << train_out << " (" << parameter_count(cfg) << " parameters)\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const Dataset data = read_features(eval_data);
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      print_config_block("model", to_kv(ck.config));
      std::cout << "session=" << eval_session << "\n";
      if (data.feature_dim() != ck.config.feature_dim) {
        throw UsageError("dataset C=" + std::to_string(data.feature_dim()) + " does not match checkpoint C=" +
                         std::to_string(ck.config.feature_dim));
      }
      const auto indices =
          indices_where(data, [&](const Utterance& u) { return eval_session == 0 || u.session == eval_session; });
      if (indices.empty()) throw UsageError("no utterances to evaluate");
      const ConfusionMatrix cm = evaluate(ck.params, ck.config, data, indices);
      std::cout.precision(6);
      std::cout << "n=" << cm.total() << " WA=" << weighted_accuracy(cm) << " UA=" << unweighted_accuracy(cm) << "\n";
      print_confusion(cm);
      return 0;
    }

    if (cv_cmd->parsed()) {
      const Dataset data = read_features(cv_data);
      const FusionConfig cfg = resolve_model(cv_model, cv_flags, data);
      const TrainConfig tcfg = resolve_train(cv_flags);
      const std::string config_dump = to_kv(cfg) + to_kv(tcfg);
      print_config_block("model+train", config_dump);
      CvOptions opts;
      opts.threads = cv_threads;
      const CvReport report = run_cv(data, cfg, tcfg, opts);
      fs::create_directories(cv_out);
      {
        std::ofstream table(fs::path(cv_out) / "cv_report.txt");
        table << config_dump << "\n";
        write_report_table(table, report);
      }
      {
        std::ofstream records(fs::path(cv_out) / "cv_report.jsonl");
        write_report_records(records, report);
      }
      write_report_table(std::cout, report);
      return 0;
    }

    if (gc_cmd->parsed()) {
      try {
        gc.model.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      print_config_block("gradcheck model", to_kv(gc.model));
      std::cout << "seed=" << gc.seed << "\nbreak_grad=" << (gc.break_grad ? "true" : "false") << "\n";
      const GradcheckReport report = run_gradcheck(gc);
      // Worst error per parameter group (role within the attention branch, or head).
      std::map<std::string, double> groups;
      for (const auto& p : report.parameters) {
        const auto dot = p.name.rfind('.');
        const std::string role = p.name.substr(dot + 1);
        const std::string owner = p.name.substr(0, p.name.find('.'));
        const std::string group = owner.rfind("layer", 0) == 0 ? "attention." + role : owner + "." + role;
        groups[group] = std::max(groups[group], p.max_rel_error);
      }
      std::cout.precision(3);
      for (const auto& [group, err] : groups) std::cout << std::scientific << group << " max_rel_err=" << err << "\n";
      std::cout << "overall max_rel_err=" << report.max_rel_error << " tolerance=" << gc.tolerance << " -> "
                << (report.passed ? "PASS" : "FAIL") << "\n";
      return report.passed ? 0 : kExitCheckFailed;
    }

    if (inspect_cmd->parsed()) {
      const auto records = read_feature_records(inspect_path);
      std::map<int, std::size_t> by_session;
      std::map<int, std::size_t> by_class;
      std::size_t audio = 0, text = 0;
      std::set<std::uint32_t> dims;
      if (!inspect_summary) std::cout << "index\tid\tsession\temotion\tmodality\tT\tC\n";
      for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const bool is_audio = r.modality == Modality::audio;
        if (!inspect_summary) {
          std::cout << i << "\t" << r.utterance_id << "\t" << int(r.session) << "\t" << int(r.emotion) << "\t"
                    << (is_audio ? "audio" : "text") << "\t" << r.values.rows() << "\t" << r.values.cols() << "\n";
        }
        (is_audio ? audio : text)++;
        dims.insert(static_cast<std::uint32_t>(r.values.cols()));
        if (is_audio) {
          ++by_session[r.session];
          ++by_class[r.emotion];
        }
      }
      std::cout << "records=" << records.size() << " audio=" << audio << " text=" << text << "\n";
      std::cout << "C=";
      for (auto it = dims.begin(); it != dims.end(); ++it) std::cout << (it == dims.begin() ? "" : ",") << *it;
      std::cout << "\n";
      for (const auto& [c, n] : by_class) std::cout << "class " << c << ": " << n << "\n";
      for (const auto& [s, n] : by_session) std::cout << "session " << s << ": " << n << "\n";
      try {
        const Dataset data = assemble_dataset(records);
        std::cout << "paired utterances=" << data.size() << "\n";
      } catch (const FormatError& e) {
        std::cout << "pairing invalid: " << e.what() << "\n";
        return kExitCheckFailed;
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return 0;
}
