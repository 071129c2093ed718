// graspn: fragmentation, statistics, WL comparison, pretraining, fine-tuning
// and probing over the supported SMILES subset.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 internal.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "graspn/downstream.hpp"
#include "graspn/fragwl.hpp"
#include "graspn/pretrain.hpp"

using namespace graspn;

namespace {

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ShapeMismatch:
    case Errc::EmptySegment:
    case Errc::InvalidIndex:
      return 3;
    default:
      return 2;
  }
}

FragmentOptions options_for_mode(const std::string& mode) {
  FragmentOptions opts;
  if (mode == "literal") opts.mode = AdjacencyMode::Literal;
  else if (mode == "routed") opts.mode = AdjacencyMode::ArticulationRouted;
  else fail(Errc::ParseError, "mode must be literal or routed, got " + mode);
  return opts;
}

std::vector<SmilesRecord> load_records(const std::string& path, bool strict) {
  SmilesDataset ds = load_smiles_dataset(path, strict);
  for (const auto& f : ds.failures)
    std::cerr << path << ":" << f.line << ": skipped: " << f.message << "\n";
  require(!ds.records.empty(), Errc::EmptyDataset, "no parsable molecules in " + path);
  return std::move(ds.records);
}

// "smiles:CCO" or a generic graph file path
GenericGraph load_wl_input(const std::string& spec) {
  if (spec.rfind("smiles:", 0) == 0) return node_graph(parse_smiles(spec.substr(7)));
  return load_generic_graph(spec);
}

std::string fragments_field(const FragmentDecomposition& d) {
  std::ostringstream out;
  for (int i = 0; i < d.num_fragments(); ++i) {
    if (i) out << ";";
    const Fragment& f = d.fragments[static_cast<std::size_t>(i)];
    switch (f.type) {
      case FragmentType::Ring: out << "Ring"; break;
      case FragmentType::Path: out << "Path"; break;
      case FragmentType::Articulation: out << "Articulation"; break;
    }
    out << ":" << f.size() << ":";
    for (std::size_t k = 0; k < f.nodes.size(); ++k) {
      if (k) out << "-";
      out << f.nodes[k];
    }
  }
  return out.str();
}

int cmd_fragment(const std::string& input, const std::string& mode, const std::string& out_path, bool strict) {
  FragmentOptions opts = options_for_mode(mode);
  std::vector<SmilesRecord> records = load_records(input, strict);
  std::ostringstream csv;
  csv << "index,m,fragments,frag_edges,connectors\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    FragmentDecomposition d = fragment(records[i].graph, opts);
    csv << i << "," << d.num_fragments() << "," << fragments_field(d) << ",";
    const auto edges = d.adjacency_edges();
    for (std::size_t k = 0; k < edges.size(); ++k) {
      if (k) csv << ";";
      csv << edges[k].first << "-" << edges[k].second;
    }
    csv << ",";
    bool first = true;
    for (int c : d.connectors) {
      if (!first) csv << ";";
      csv << c;
      first = false;
    }
    csv << "\n";
  }
  write_file_atomic(out_path, csv.str());
  std::cout << "fragmented " << records.size() << " molecules -> " << out_path << "\n";
  return 0;
}

int cmd_stats(const std::string& input, const std::string& out_path, bool strict) {
  std::vector<SmilesRecord> records = load_records(input, strict);
  std::vector<FragmentDecomposition> decomps;
  decomps.reserve(records.size());
  for (const auto& r : records) decomps.push_back(fragment(r.graph));
  StatsReport report = decomposition_stats(decomps);
  write_file_atomic(out_path, report.to_csv());
  std::cout << "molecules: " << records.size() << "\n";
  std::cout << "modal ring size: " << report.modal_ring_size() << "\n";
  std::cout << "modal path length: " << report.modal_path_length() << "\n";
  std::cout << "stats -> " << out_path << "\n";
  return 0;
}

int cmd_wl(const std::string& g1_spec, const std::string& g2_spec, bool fragment_level,
           const std::string& hist_path) {
  GenericGraph g1 = load_wl_input(g1_spec);
  GenericGraph g2 = load_wl_input(g2_spec);
  const bool node_level = wl_distinguish(g1, g2);
  std::cout << "node distinguishable: " << (node_level ? "yes" : "no") << "\n";
  if (fragment_level) {
    MolecularGraph m1 = g1_spec.rfind("smiles:", 0) == 0 ? parse_smiles(g1_spec.substr(7)) : carbon_skeleton(g1);
    MolecularGraph m2 = g2_spec.rfind("smiles:", 0) == 0 ? parse_smiles(g2_spec.substr(7)) : carbon_skeleton(g2);
    const bool frag = wl_distinguish(build_fragment_graph(m1), build_fragment_graph(m2));
    std::cout << "fragment distinguishable: " << (frag ? "yes" : "no") << "\n";
  }
  if (!hist_path.empty()) {
    std::ostringstream csv;
    csv << "graph,iteration,color,count\n";
    for (int which = 0; which < 2; ++which) {
      ColorHistogram h = wl_refine(which == 0 ? g1 : g2);
      for (std::size_t t = 0; t < h.iterations.size(); ++t)
        for (auto [color, count] : h.iterations[t])
          csv << (which == 0 ? "g1" : "g2") << "," << t << "," << color << "," << count << "\n";
    }
    write_file_atomic(hist_path, csv.str());
  }
  return 0;
}

std::pair<EncoderConfig, TrainerConfig> load_run_config(const std::string& path) {
  if (path.empty()) return {EncoderConfig{}, TrainerConfig{}};
  std::ifstream in(path);
  require(in.good(), Errc::IoError, "cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_configs(buf.str());
}

std::vector<TrainItem> to_train_items(const std::vector<SmilesRecord>& records) {
  std::vector<TrainItem> items;
  items.reserve(records.size());
  for (const auto& r : records) {
    TrainItem item;
    item.graph = r.graph;
    item.decomp = fragment(item.graph);
    items.push_back(std::move(item));
  }
  return items;
}

int cmd_pretrain(const std::string& config_path, const std::string& data_path, const std::string& ckpt_path,
                 const std::string& metrics_path, std::uint64_t seed, bool seed_given, bool strict,
                 bool no_fragments, bool no_fragment_mp) {
  auto [enc, tr] = load_run_config(config_path);
  if (seed_given) tr.seed = seed;
  if (no_fragments) enc.use_fragments = false;
  if (no_fragment_mp) enc.use_fragment_mp = false;
  enc.validate();
  tr.validate(enc);

  std::vector<TrainItem> items = to_train_items(load_records(data_path, strict));
  PretrainModel model = PretrainModel::create(enc, tr);
  PretrainRunResult result = run_pretraining(model, items, ckpt_path);
  write_file_atomic(metrics_path, result.metrics_csv);
  std::cout << "molecules: " << items.size() << "\nsteps: " << model.step_count
            << "\nfirst loss: " << result.first_loss << "\nlast loss: " << result.last_loss
            << "\ncheckpoint -> " << ckpt_path << "\nmetrics -> " << metrics_path << "\n";
  return 0;
}

std::vector<LabeledItem> to_labeled_items(const std::vector<SmilesRecord>& records, bool need_labels) {
  std::vector<LabeledItem> items;
  std::size_t num_tasks = 0;
  for (const auto& r : records) num_tasks = std::max(num_tasks, r.labels.size());
  require(!need_labels || num_tasks >= 1, Errc::EmptyDataset, "dataset has no label columns");
  for (const auto& r : records) {
    LabeledItem item;
    item.graph = r.graph;
    item.decomp = fragment(item.graph);
    item.labels = r.labels;
    item.labels.resize(num_tasks, std::numeric_limits<double>::quiet_NaN());
    items.push_back(std::move(item));
  }
  return items;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& data_path, const std::string& task_kind,
                 const std::string& out_path, double lr, int epochs, std::uint64_t seed, bool strict) {
  PretrainModel model = load_checkpoint(ckpt_path);
  std::vector<LabeledItem> items = to_labeled_items(load_records(data_path, strict), true);
  TaskSpec task;
  if (task_kind == "classification") task.kind = TaskSpec::Kind::Classification;
  else if (task_kind == "regression") task.kind = TaskSpec::Kind::Regression;
  else fail(Errc::ParseError, "task must be classification or regression, got " + task_kind);
  task.num_tasks = static_cast<int>(items.front().labels.size());

  FinetuneConfig cfg;
  cfg.lr = lr;
  cfg.epochs = epochs;
  cfg.seed = seed;
  FinetuneReport report = finetune(model, items, task, cfg);
  write_file_atomic(out_path, report.csv);
  std::cout << "tasks: " << task.num_tasks << "\nbest epoch: " << report.best_epoch << "\n"
            << report.metric_name << " train/valid/test: " << report.train_metric << "/" << report.valid_metric
            << "/" << report.test_metric << "\nfinal train " << report.metric_name << ": "
            << report.final_train_metric << "\nmetrics -> " << out_path << "\n";
  return 0;
}

std::vector<int> parse_queries(const std::string& spec) {
  std::vector<int> out;
  if (spec == "all") {
    for (int i = 0; i < kVocabSize; ++i) out.push_back(i);
    return out;
  }
  std::istringstream in(spec);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    int found = -1;
    for (int i = 0; i < kVocabSize; ++i)
      if (vocab_entry_name(i) == tok) found = i;
    require(found >= 0, Errc::ParseError, "unknown fragment query '" + tok + "'");
    out.push_back(found);
  }
  require(!out.empty(), Errc::ParseError, "empty query list");
  return out;
}

int cmd_probe(const std::string& ckpt_path, const std::string& data_path, const std::string& queries,
              const std::string& out_path, std::uint64_t seed, bool strict) {
  PretrainModel model = load_checkpoint(ckpt_path);
  std::vector<LabeledItem> items = to_labeled_items(load_records(data_path, strict), false);
  ProbeReport report = probe_fragment_counts(model, items, parse_queries(queries), seed);
  write_file_atomic(out_path, report.to_csv());
  for (const auto& row : report.rows) {
    std::cout << row.query << ": ";
    if (row.degenerate) std::cout << "DegenerateLabels";
    else std::cout << "accuracy " << row.accuracy;
    std::cout << " (n_pos " << row.n_pos << ")\n";
  }
  std::cout << "probe -> " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical molecular representation learning toolkit"};
  app.require_subcommand(1);

  std::string input, out_path, mode = "routed";
  bool strict = false;
  auto* frag = app.add_subcommand("fragment", "decompose molecules into ring/path/articulation fragments");
  frag->add_option("--input", input, "SMILES dataset file")->required();
  frag->add_option("--mode", mode, "fragment adjacency mode: literal|routed")->capture_default_str();
  frag->add_option("--out", out_path, "output CSV path")->required();
  frag->add_flag("--strict", strict, "abort on the first unparsable molecule");

  auto* stats = app.add_subcommand("stats", "fragment distribution statistics over a dataset");
  stats->add_option("--input", input, "SMILES dataset file")->required();
  stats->add_option("--out", out_path, "output CSV path")->required();
  stats->add_flag("--strict", strict, "abort on the first unparsable molecule");

  std::string g1_spec, g2_spec, hist_path;
  bool fragment_level = false;
  auto* wl = app.add_subcommand("wl", "1-WL comparison of two graphs, optionally at the fragment level");
  wl->add_option("--g1", g1_spec, "graph file or smiles:STRING")->required();
  wl->add_option("--g2", g2_spec, "graph file or smiles:STRING")->required();
  wl->add_flag("--fragment", fragment_level, "also compare fragment graphs");
  wl->add_option("--hist", hist_path, "write per-iteration color histograms to this CSV");

  std::string config_path, data_path, ckpt_path, metrics_path;
  std::uint64_t seed = 0;
  bool no_fragments = false, no_fragment_mp = false;
  auto* pre = app.add_subcommand("pretrain", "masked embedding-prediction pretraining");
  pre->add_option("--config", config_path, "key=value config file (defaults baked in)");
  pre->add_option("--data", data_path, "SMILES dataset file")->required();
  pre->add_option("--out", ckpt_path, "checkpoint output path")->required();
  pre->add_option("--metrics", metrics_path, "metrics CSV output path")->required();
  auto* seed_opt = pre->add_option("--seed", seed, "training seed");
  pre->add_flag("--strict", strict, "abort on the first unparsable molecule");
  pre->add_flag("--no-fragments", no_fragments, "disable fragment information (ablation)");
  pre->add_flag("--no-fragment-mp", no_fragment_mp, "disable fragment-level message passing (ablation)");

  std::string task_kind = "classification";
  double ft_lr = 1e-4;
  int ft_epochs = 100;
  auto* ft = app.add_subcommand("finetune", "fine-tune a pretrained checkpoint on labeled molecules");
  ft->add_option("--checkpoint", ckpt_path, "pretrained checkpoint")->required();
  ft->add_option("--data", data_path, "SMILES dataset with tab-separated labels")->required();
  ft->add_option("--task", task_kind, "classification|regression")->capture_default_str();
  ft->add_option("--out", out_path, "metrics CSV output path")->required();
  ft->add_option("--lr", ft_lr, "learning rate")->capture_default_str();
  ft->add_option("--epochs", ft_epochs, "fine-tuning epochs")->capture_default_str();
  ft->add_option("--seed", seed, "split/shuffle seed")->capture_default_str();
  ft->add_flag("--strict", strict, "abort on the first unparsable molecule");

  std::string queries = "all";
  auto* probe = app.add_subcommand("probe", "frozen-representation fragment-count probing");
  probe->add_option("--checkpoint", ckpt_path, "pretrained checkpoint")->required();
  probe->add_option("--data", data_path, "SMILES dataset file")->required();
  probe->add_option("--queries", queries, "comma-separated vocabulary entries, or 'all'")->capture_default_str();
  probe->add_option("--out", out_path, "probe CSV output path")->required();
  probe->add_option("--seed", seed, "probe split seed")->capture_default_str();
  probe->add_flag("--strict", strict, "abort on the first unparsable molecule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors are exit 1, --help is success
  }

  try {
    if (frag->parsed()) return cmd_fragment(input, mode, out_path, strict);
    if (stats->parsed()) return cmd_stats(input, out_path, strict);
    if (wl->parsed()) return cmd_wl(g1_spec, g2_spec, fragment_level, hist_path);
    if (pre->parsed())
      return cmd_pretrain(config_path, data_path, ckpt_path, metrics_path, seed, !seed_opt->empty(), strict,
                          no_fragments, no_fragment_mp);
    if (ft->parsed()) return cmd_finetune(ckpt_path, data_path, task_kind, out_path, ft_lr, ft_epochs, seed, strict);
    if (probe->parsed()) return cmd_probe(ckpt_path, data_path, queries, out_path, seed, strict);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
