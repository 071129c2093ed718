#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

const char* kCli = GRASPN_CLI_PATH;

struct RunResult {
  int exit_code;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args) {
  const std::string out_path = "/tmp/graspn_cli_stdout.txt";
  const std::string err_path = "/tmp/graspn_cli_stderr.txt";
  const std::string cmd = std::string(kCli) + " " + args + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = "/tmp/graspn_cli_" + name;
  std::ofstream out(path, std::ios::trunc);
  out << content;
  return path;
}

std::string slurp_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool file_exists(const std::string& path) {
  std::ifstream in(path);
  return in.good();
}

}  // namespace

TEST_CASE("fragment: benzene gives one fragment") {
  std::string in = write_temp("benzene.smi", "c1ccccc1\n");
  std::string out = "/tmp/graspn_cli_frag.csv";
  RunResult r = run_cli("fragment --input " + in + " --out " + out);
  REQUIRE(r.exit_code == 0);
  std::string csv = slurp_file(out);
  CHECK(csv.find("index,m,fragments,frag_edges,connectors") == 0);
  CHECK(csv.find("0,1,Ring:6:") != std::string::npos);
}

TEST_CASE("fragment: strict mode fails loudly with the line number") {
  std::string in = write_temp("bad.smi", "CCO\nNOT_A_SMILES(\n");
  std::string out = "/tmp/graspn_cli_frag_bad.csv";
  std::remove(out.c_str());
  RunResult r = run_cli("fragment --strict --input " + in + " --out " + out);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("line 2") != std::string::npos);
  CHECK_FALSE(file_exists(out));  // no partial outputs
}

TEST_CASE("fragment: routed vs literal edge counts on neopentane") {
  std::string in = write_temp("neo.smi", "CC(C)(C)C\n");
  std::string out = "/tmp/graspn_cli_neo.csv";
  RunResult routed = run_cli("fragment --mode routed --input " + in + " --out " + out);
  REQUIRE(routed.exit_code == 0);
  std::string routed_csv = slurp_file(out);
  RunResult literal = run_cli("fragment --mode literal --input " + in + " --out " + out);
  REQUIRE(literal.exit_code == 0);
  std::string literal_csv = slurp_file(out);
  auto count_edges = [](const std::string& csv) {
    // fourth field of the data row
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    int commas = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < line.size(); ++i)
      if (line[i] == ',' && ++commas == 3) {
        start = i + 1;
        break;
      }
    std::size_t end = line.find(',', start);
    std::string field = line.substr(start, end - start);
    if (field.empty()) return 0;
    int n = 1;
    for (char c : field) n += c == ';' ? 1 : 0;
    return n;
  };
  CHECK(count_edges(routed_csv) == 4);
  CHECK(count_edges(literal_csv) == 10);
}

TEST_CASE("stats command") {
  std::string in = write_temp("stats.smi", "c1ccccc1\nCCC\n");
  std::string out = "/tmp/graspn_cli_stats.csv";
  RunResult r = run_cli("stats --input " + in + " --out " + out);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("modal ring size: 6") != std::string::npos);
  std::string csv = slurp_file(out);
  CHECK(csv.find("statistic,bucket,count") == 0);
  CHECK(csv.find("ring_size,6,1") != std::string::npos);
}

TEST_CASE("wl command on graph files and smiles") {
  std::string tri = write_temp("tri.graph", "3 3\n0 1\n1 2\n2 0\n");
  std::string quad = write_temp("quad.graph", "4 4\n0 1\n1 2\n2 3\n3 0\n");
  RunResult r = run_cli("wl --g1 " + tri + " --g2 " + quad);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("node distinguishable: yes") != std::string::npos);

  r = run_cli("wl --g1 " + tri + " --g2 " + tri + " --fragment");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("node distinguishable: no") != std::string::npos);
  CHECK(r.out.find("fragment distinguishable: no") != std::string::npos);

  // two disjoint triangles vs a six-cycle: only the fragment level separates
  std::string two_tri = write_temp("twotri.graph", "6 6\n0 1\n1 2\n2 0\n3 4\n4 5\n5 3\n");
  std::string hex = write_temp("hex.graph", "6 6\n0 1\n1 2\n2 3\n3 4\n4 5\n5 0\n");
  std::string hist = "/tmp/graspn_cli_hist.csv";
  r = run_cli("wl --g1 " + two_tri + " --g2 " + hex + " --fragment --hist " + hist);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("node distinguishable: no") != std::string::npos);
  CHECK(r.out.find("fragment distinguishable: yes") != std::string::npos);
  CHECK(slurp_file(hist).find("graph,iteration,color,count") == 0);

  r = run_cli("wl --g1 smiles:c1ccccc1 --g2 smiles:C1CCCCC1");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("node distinguishable: yes") != std::string::npos);  // aromatic labels differ
}

TEST_CASE("pretrain: tiny run, determinism, config validation") {
  std::string config = write_temp("tiny.cfg",
                                  "# tiny encoder for the cli test\n"
                                  "node_layers=2\nhidden=8\nfragment_layer_positions=1\nfrag_gnn_layers=1\n"
                                  "epochs=2\nbatch_size=4\nlr=0.001\n");
  std::string data = write_temp("pretrain.smi", "CCO\nc1ccccc1\nCC(C)C\nC1CCCC1\nCCNCC\nOCCO\nCCSC\nc1ccncc1\n");
  std::string ckpt = "/tmp/graspn_cli_ckpt.bin";
  std::string metrics = "/tmp/graspn_cli_metrics.csv";
  RunResult r = run_cli("pretrain --config " + config + " --data " + data + " --out " + ckpt + " --metrics " +
                        metrics + " --seed 5");
  REQUIRE(r.exit_code == 0);
  CHECK(file_exists(ckpt));
  std::string m1 = slurp_file(metrics);
  CHECK(m1.find("step,epoch,loss,tau,target_var") == 0);

  // same seed, identical metrics bytes
  RunResult r2 = run_cli("pretrain --config " + config + " --data " + data + " --out " + ckpt + " --metrics " +
                         metrics + " --seed 5");
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp_file(metrics) == m1);

  // a different seed changes the trajectory
  run_cli("pretrain --config " + config + " --data " + data + " --out " + ckpt + " --metrics " + metrics +
          " --seed 6");
  CHECK(slurp_file(metrics) != m1);

  // unknown config key: rejected before any work, outputs untouched
  std::string bad = write_temp("bad.cfg", "node_layers=2\nnot_a_key=1\n");
  std::string fresh = "/tmp/graspn_cli_fresh.csv";
  std::remove(fresh.c_str());
  RunResult rbad =
      run_cli("pretrain --config " + bad + " --data " + data + " --out " + ckpt + " --metrics " + fresh);
  CHECK(rbad.exit_code == 2);
  CHECK(rbad.err.find("not_a_key") != std::string::npos);
  CHECK_FALSE(file_exists(fresh));
}

TEST_CASE("finetune and probe over a tiny checkpoint") {
  std::string config = write_temp("tiny2.cfg",
                                  "node_layers=2\nhidden=8\nfragment_layer_positions=1\nfrag_gnn_layers=1\n"
                                  "epochs=2\nbatch_size=4\n");
  std::string data = write_temp("pre2.smi", "CCO\nc1ccccc1\nCC(C)C\nC1CCCC1\nCCNCC\nOCCO\nCCSC\nc1ccncc1\n");
  std::string ckpt = "/tmp/graspn_cli_ckpt2.bin";
  std::string metrics = "/tmp/graspn_cli_metrics2.csv";
  REQUIRE(run_cli("pretrain --config " + config + " --data " + data + " --out " + ckpt + " --metrics " + metrics)
              .exit_code == 0);

  std::string labeled = write_temp("ft.smi",
                                   "CCN\t1\nCCO\t0\nCCCN\t1\nCCCO\t0\nNCCN\t1\nOCCO\t0\nCN\t1\nCO\t0\n"
                                   "CCCCN\t1\nCCCCO\t0\nNC(C)C\t1\nOC(C)C\t0\n");
  std::string ft_out = "/tmp/graspn_cli_ft.csv";
  RunResult ft = run_cli("finetune --checkpoint " + ckpt + " --data " + labeled +
                         " --task classification --epochs 5 --out " + ft_out);
  REQUIRE(ft.exit_code == 0);
  CHECK(slurp_file(ft_out).find("task,split,metric,value") == 0);

  std::string probe_out = "/tmp/graspn_cli_probe.csv";
  std::string probe_data = write_temp("probe.smi", "c1ccccc1\nCCO\nc1ccccc1C\nCCC\nCc1ccccc1C\nCCCC\n");
  RunResult probe =
      run_cli("probe --checkpoint " + ckpt + " --data " + probe_data + " --queries ring6,path2 --out " + probe_out);
  REQUIRE(probe.exit_code == 0);
  std::string csv = slurp_file(probe_out);
  CHECK(csv.find("query,accuracy,n_pos") == 0);
  CHECK(csv.find("ring6,") != std::string::npos);

  // bad checkpoint path is a data error
  RunResult missing = run_cli("probe --checkpoint /nonexistent.ckpt --data " + probe_data + " --out " + probe_out);
  CHECK(missing.exit_code == 2);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli("fragment").exit_code == 1);        // missing required flags
  CHECK(run_cli("no_such_command").exit_code == 1);
  CHECK(run_cli("--help").exit_code == 0);
}
