// dccl: data generation, one-shot conception clustering, training and
// evaluation from the command line.

#include "dccl/dataset.hpp"
#include "dccl/eval.hpp"
#include "dccl/infomap.hpp"
#include "dccl/parallel.hpp"
#include "dccl/rng.hpp"
#include "dccl/simgraph.hpp"
#include "dccl/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dccl;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

EmbeddingFormat format_for(const fs::path& p) {
  return p.extension() == ".csv" ? EmbeddingFormat::csv : EmbeddingFormat::binary;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Full option dump minus unset optionals, which would not survive a reload.
std::string manifest_of(const CLI::App& app) {
  std::istringstream in(app.config_to_str(true, false));
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.size() >= 3 && line.ends_with("=\"\"")) continue;
    out += line + '\n';
  }
  return out;
}

json metrics_json(const Metrics& m) {
  return {{"all", m.acc_all}, {"old", m.acc_old}, {"new", m.acc_new}, {"k", m.k_used}};
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string out;
  SyntheticSpec synth;
  SplitSpec split;
  std::uint64_t seed = 0;
  std::string format = "binary";
};

void add_gen(CLI::App& app, GenArgs& a) {
  app.add_option("--out", a.out, "Output directory")->required();
  app.add_option("--superclasses", a.synth.num_superclasses)->capture_default_str();
  app.add_option("--classes-per-superclass", a.synth.classes_per_super)->capture_default_str();
  app.add_option("--instances-per-class", a.synth.instances_per_class)->capture_default_str();
  app.add_option("--dim", a.synth.dim)->capture_default_str();
  app.add_option("--sigma", a.synth.intra_class_sigma, "Within-class standard deviation")->capture_default_str();
  app.add_option("--spread", a.synth.superclass_spread, "Superclass mean scale")->capture_default_str();
  app.add_option("--labeled-class-fraction", a.split.labeled_class_fraction)->capture_default_str();
  app.add_option("--labeled-instance-fraction", a.split.labeled_instance_fraction)->capture_default_str();
  app.add_option("--seed", a.seed)->capture_default_str();
  app.add_option("--format", a.format, "Embedding file format")
      ->check(CLI::IsMember({"binary", "csv"}))
      ->capture_default_str();
}

void run_gen(GenArgs a) {
  a.synth.seed = derive_seed(a.seed, "gen.synthetic");
  a.split.seed = derive_seed(a.seed, "gen.split");
  const auto syn = generate_synthetic(a.synth);
  const auto ds = make_gcd_split(syn.embeddings, syn.class_labels, a.split);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const auto fmt_kind = a.format == "csv" ? EmbeddingFormat::csv : EmbeddingFormat::binary;
  const fs::path emb = dir / (a.format == "csv" ? "embeddings.csv" : "embeddings.bin");
  save_embeddings(emb, ds.embeddings, fmt_kind);
  save_labels(dir / "labels.csv", ds.labels);

  json manifest = {
      {"seed", a.seed},
      {"generator",
       {{"superclasses", a.synth.num_superclasses},
        {"classes_per_superclass", a.synth.classes_per_super},
        {"instances_per_class", a.synth.instances_per_class},
        {"dim", a.synth.dim},
        {"sigma", a.synth.intra_class_sigma},
        {"spread", a.synth.superclass_spread}}},
      {"split",
       {{"labeled_class_fraction", a.split.labeled_class_fraction},
        {"labeled_instance_fraction", a.split.labeled_instance_fraction}}},
      {"embeddings", emb.filename().string()},
      {"labels", "labels.csv"},
      {"num_instances", ds.size()},
      {"num_classes", a.synth.num_superclasses * a.synth.classes_per_super},
      {"num_labeled", ds.num_labeled()},
      {"old_classes", ds.labeled_class_set},
      {"truth", ds.eval_labels},
  };
  write_file(dir / "split.json", manifest.dump(2) + "\n");
  std::cout << json{{"instances", ds.size()}, {"labeled", ds.num_labeled()}, {"dir", dir.string()}}.dump()
            << "\n";
}

// ------------------------------------------------------------- shared data

struct DataArgs {
  std::string embeddings;
  std::string labels;
  std::string split;
};

void add_data(CLI::App& app, DataArgs& d, bool split_required) {
  app.add_option("--embeddings", d.embeddings, "Embedding file (.bin or .csv)")->required();
  app.add_option("--labels", d.labels, "index,label CSV; -1 or absent rows are unlabeled");
  auto* s = app.add_option("--split", d.split, "Split manifest holding ground truth (from gen-data)");
  if (split_required) s->required();
}

/// Dataset with ground truth from the split manifest when one is given.
/// Without it the visible labels stand in for truth and unlabeled rows get -1,
/// which is enough to train but not to evaluate.
GcdDataset load_dataset(const DataArgs& d) {
  GcdDataset ds;
  ds.embeddings = load_embeddings(d.embeddings, format_for(d.embeddings));
  const Index m = ds.embeddings.count();
  ds.labels = d.labels.empty() ? std::vector<Label>(static_cast<std::size_t>(m)) : load_labels(d.labels, m);
  for (const auto& l : ds.labels) {
    if (l) ds.labeled_class_set.insert(*l);
  }
  if (!d.split.empty()) {
    const json manifest = read_json(d.split);
    try {
      ds.eval_labels = manifest.at("truth").get<std::vector<ClassId>>();
    } catch (const json::exception& e) {
      throw FormatError(d.split + ": " + e.what());
    }
    if (static_cast<Index>(ds.eval_labels.size()) != m) {
      throw ShapeError(d.split + ": truth has " + std::to_string(ds.eval_labels.size()) + " rows, embeddings have " +
                       std::to_string(m));
    }
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      if (ds.labels[i] && *ds.labels[i] != ds.eval_labels[i]) {
        throw InvalidArgument("label of row " + std::to_string(i) + " disagrees with the split manifest");
      }
    }
  } else {
    ds.eval_labels.resize(static_cast<std::size_t>(m), -1);
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      if (ds.labels[i]) ds.eval_labels[i] = *ds.labels[i];
    }
  }
  return ds;
}

// ----------------------------------------------------------- graph options

struct GraphArgs {
  std::string preset = "fine";
  std::optional<double> tau_f;
  Index knn_k = GraphConfig{}.knn_k;
  unsigned threads = default_threads();

  GraphConfig resolve() const {
    GraphConfig g;
    g.tau_f = tau_f ? *tau_f : (preset == "generic" ? 0.7 : 0.6);
    g.knn_k = knn_k;
    g.threads = threads;
    return g;
  }
};

void add_graph(CLI::App& app, GraphArgs& g) {
  app.add_option("--preset", g.preset, "Link threshold preset: fine (0.6) or generic (0.7)")
      ->check(CLI::IsMember({"fine", "generic"}))
      ->capture_default_str();
  app.add_option("--tau-f", g.tau_f, "Link threshold, overrides --preset")->check(CLI::Range(0.0, 1.0));
  app.add_option("--knn-k", g.knn_k, "Neighbour candidates per node")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for graph construction")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

// ----------------------------------------------------------------- cluster

struct ClusterArgs {
  DataArgs data;
  GraphArgs graph;
  std::uint64_t seed = 0;
  std::string out;
  std::string edges;
};

void run_cluster(const ClusterArgs& a) {
  const auto emb = load_embeddings(a.data.embeddings, format_for(a.data.embeddings));
  const std::vector<Label> labels = a.data.labels.empty()
                                        ? std::vector<Label>(static_cast<std::size_t>(emb.count()))
                                        : load_labels(a.data.labels, emb.count());
  const auto graph = build_consolidated_graph(labels, emb.data(), a.graph.resolve());
  const auto partition = cluster(graph, derive_seed(a.seed, "infomap"));
  write_partition(a.out, partition);
  if (!a.edges.empty()) write_edge_list(a.edges, graph);
  json report = {{"conceptions", partition.num_conceptions()}, {"edges", graph.num_undirected()}};
  if (!graph.edges.empty()) report["codelength"] = codelength(graph, partition);
  std::cout << report.dump() << "\n";
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  DataArgs data;
  GraphArgs graph;
  TrainConfig cfg;
  std::string out;
  std::optional<Index> k;
  int eval_restarts = 10;
  bool xavier_init = false;
  bool no_dispersion_diagonal = false;
  bool no_renorm_memory = false;
  bool verbose = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto& c = a.cfg;
  add_data(app, a.data, false);
  app.add_option("--out", a.out, "Run directory")->required();
  app.add_option("--seed", c.seed, "Root seed")->capture_default_str();
  app.add_option("--epochs", c.max_epoch)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--tau-i", c.tau_i, "Epochs between conception generation rounds")->capture_default_str();
  app.add_option("--n-c", c.n_c, "Conceptions per conception batch")->capture_default_str();
  app.add_option("--n-i", c.n_i, "Instances per conception")->capture_default_str();
  app.add_option("--batch", c.instance_batch, "Instance batch size")->capture_default_str();
  app.add_option("--lr-extractor", c.lr_extractor)->capture_default_str();
  app.add_option("--lr-head", c.lr_head)->capture_default_str();
  app.add_option("--sgd-momentum", c.sgd_momentum)->capture_default_str();
  app.add_option("--eta", c.eta, "Memory momentum")->capture_default_str();
  app.add_option("--augment", c.augment_strength, "Augmentation strength")->capture_default_str();
  app.add_option("--extractor-hidden", c.extractor_hidden)->capture_default_str();
  app.add_option("--feature-dim", c.feature_dim)->capture_default_str();
  app.add_option("--head-hidden", c.head_hidden)->capture_default_str();
  app.add_option("--projection-dim", c.projection_dim)->capture_default_str();
  app.add_flag("--xavier-init", a.xavier_init, "Random extractor instead of the near-isometry start");

  auto& l = c.loss;
  app.add_option("--tau-c", l.tau_c)->capture_default_str();
  app.add_option("--tau-s", l.tau_s)->capture_default_str();
  app.add_option("--tau-l", l.tau_l)->capture_default_str();
  app.add_option("--tau-m", l.tau_m)->capture_default_str();
  app.add_option("--lambda", l.lambda)->capture_default_str();
  app.add_option("--alpha", l.alpha)->capture_default_str();
  app.add_option("--beta", l.beta)->capture_default_str();
  app.add_flag("--include-positive", l.include_positive_in_denominator,
               "Keep the positive conception in the conception-loss denominator");
  app.add_flag("--no-dispersion-diagonal", a.no_dispersion_diagonal, "Drop the constant diagonal dispersion terms");

  auto& ab = c.ablation;
  app.add_flag("--no-instance-loss", ab.no_instance_loss);
  app.add_flag("--no-conception-loss", ab.no_conception_loss);
  app.add_flag("--no-dispersion-loss", ab.no_dispersion_loss);
  app.add_flag("--no-momentum-update", ab.no_momentum_update);
  app.add_flag("--no-consolidation", ab.no_consolidation);
  app.add_flag("--no-renorm-memory", a.no_renorm_memory, "Leave memory rows unnormalized");

  add_graph(app, a.graph);
  app.add_option("--k", a.k, "Cluster count for evaluation (default: final conception count)");
  app.add_option("--eval-restarts", a.eval_restarts)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--verbose", a.verbose, "Per-epoch progress on stderr");
}

Metrics evaluate_run(const MatrixXd& features, const GcdDataset& ds, Index k, std::uint64_t seed, int restarts) {
  return evaluate(features, ds, k, derive_seed(seed, "eval"), restarts);
}

void run_train(TrainArgs a, const std::string& manifest) {
  const GcdDataset ds = load_dataset(a.data);
  a.cfg.graph = a.graph.resolve();
  a.cfg.isometric_init = !a.xavier_init;
  a.cfg.loss.dispersion_diagonal = !a.no_dispersion_diagonal;
  a.cfg.renorm_memory = !a.no_renorm_memory;
  a.cfg.validate();

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_file(dir / "manifest.ini", manifest);

  std::ofstream log(dir / "train_log.csv", std::ios::binary | std::ios::trunc);
  if (!log) throw Error("cannot write " + (dir / "train_log.csv").string());
  log << "epoch,iter,K,L_I,L_C,L_D,L_total,lr\n";
  const auto sink = [&](const IterationRecord& r) {
    log << r.epoch << ',' << r.iter << ',' << r.num_conceptions << ',' << fmt(r.loss.instance) << ','
        << fmt(r.loss.conception) << ',' << fmt(r.loss.dispersion) << ',' << fmt(r.total) << ',' << fmt(r.lr)
        << '\n';
  };
  TrainResult result = train(ds, a.cfg, sink);
  log.close();
  if (!log) throw Error("write failed for train_log.csv");

  std::string epochs = "epoch,K,dcg,L_I,L_C,L_D,L_total,lr\n";
  for (const auto& e : result.epochs) {
    epochs += std::to_string(e.epoch) + ',' + std::to_string(e.num_conceptions) + ',' + (e.dcg_round ? "1" : "0") +
              ',' + fmt(e.loss.instance) + ',' + fmt(e.loss.conception) + ',' + fmt(e.loss.dispersion) + ',' +
              fmt(e.total) + ',' + fmt(e.lr) + '\n';
    if (a.verbose) {
      std::cerr << "epoch " << e.epoch << " K=" << e.num_conceptions << " loss=" << e.total << " lr=" << e.lr
                << " (" << e.wall_seconds << " s)\n";
    }
  }
  write_file(dir / "epochs.csv", epochs);
  write_partition(dir / "partition.csv", result.assignment);

  const Index final_k = result.assignment.num_conceptions();
  save_checkpoint(dir / "model.ckpt", result.params,
                  {{"num_conceptions", std::to_string(final_k)}, {"seed", std::to_string(a.cfg.seed)}});

  if (a.data.split.empty()) {
    std::cout << json{{"k", final_k}, {"note", "no --split given, evaluation skipped"}}.dump() << "\n";
    return;
  }
  const MatrixXd features = extract_features(result.params, ds.embeddings.data());
  const Metrics m = evaluate_run(features, ds, a.k.value_or(final_k), a.cfg.seed, a.eval_restarts);
  const std::string record = metrics_json(m).dump();
  write_file(dir / "metrics.json", record + "\n");
  std::cout << record << "\n";
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  DataArgs data;
  std::string checkpoint;
  std::optional<Index> k;
  std::optional<std::uint64_t> seed;
  int eval_restarts = 10;
  std::string out;
};

void run_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const GcdDataset ds = load_dataset(a.data);
  if (ds.embeddings.dim() != ckpt.params.input_dim()) {
    throw ShapeError("checkpoint expects " + std::to_string(ckpt.params.input_dim()) + "-d inputs, embeddings are " +
                     std::to_string(ds.embeddings.dim()) + "-d");
  }
  auto meta = [&](const std::string& key) -> std::optional<std::string> {
    auto it = ckpt.metadata.find(key);
    return it == ckpt.metadata.end() ? std::nullopt : std::optional(it->second);
  };
  Index k = 0;
  if (a.k) {
    k = *a.k;
  } else if (auto v = meta("num_conceptions")) {
    k = std::stoll(*v);
  } else {
    throw InvalidArgument("checkpoint has no conception count; pass --k");
  }
  std::uint64_t seed = 0;
  if (a.seed) {
    seed = *a.seed;
  } else if (auto v = meta("seed")) {
    seed = std::stoull(*v);
  }
  const MatrixXd features = extract_features(ckpt.params, ds.embeddings.data());
  const Metrics m = evaluate_run(features, ds, k, seed, a.eval_restarts);
  const std::string record = metrics_json(m).dump();
  if (!a.out.empty()) write_file(a.out, record + "\n");
  std::cout << record << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conception-aware contrastive training and category discovery on embedding files"};
  app.set_config("--config", "", "Read options from a config file (e.g. a run's manifest.ini)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic partially labeled dataset");
  add_gen(*gen_cmd, gen);

  ClusterArgs clu;
  auto* clu_cmd = app.add_subcommand("cluster", "One conception-generation round on an embedding file");
  add_data(*clu_cmd, clu.data, false);
  add_graph(*clu_cmd, clu.graph);
  clu_cmd->add_option("--seed", clu.seed)->capture_default_str();
  clu_cmd->add_option("--out", clu.out, "Partition CSV (node,conception)")->required();
  clu_cmd->add_option("--edges", clu.edges, "Also dump the graph as an edge list");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train the encoder, then evaluate");
  add_train(*tr_cmd, tr);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_data(*ev_cmd, ev.data, true);
  ev_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  ev_cmd->add_option("--k", ev.k, "Cluster count (default: the checkpoint's conception count)");
  ev_cmd->add_option("--seed", ev.seed, "Evaluation seed (default: the training seed)");
  ev_cmd->add_option("--eval-restarts", ev.eval_restarts)->check(CLI::PositiveNumber)->capture_default_str();
  ev_cmd->add_option("--out", ev.out, "Also write the metrics record here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*gen_cmd) run_gen(gen);
    if (*clu_cmd) run_cluster(clu);
    if (*tr_cmd) run_train(tr, manifest_of(app));
    if (*ev_cmd) run_eval(ev);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
