// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <map>
#include <set>

#include "records.hpp"
#include "saelab/evaluation.hpp"
#include "saelab/harness.hpp"

namespace saelab {

namespace fs = std::filesystem;
using records::Json;
using records::fixed;
using records::percent;

namespace {

using Table = std::vector<std::vector<std::string>>;

std::string csv(const Table& t) {
  std::string out;
  for (const auto& row : t) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += row[i];
    }
    out += "\n";
  }
  return out;
}

std::string markdown(const Table& t) {
  if (t.empty()) return "";
  std::string out;
  auto line = [&](const std::vector<std::string>& r) {
    out += "|";
    for (const auto& c : r) out += " " + c + " |";
    out += "\n";
  };
  line(t[0]);
  out += "|";
  for (std::size_t i = 0; i < t[0].size(); ++i) out += " --- |";
  out += "\n";
  for (std::size_t i = 1; i < t.size(); ++i) line(t[i]);
  return out;
}

std::string num(const Json& v, int digits) { return v.is_number() ? fixed(v.get<double>(), digits) : "NA"; }

std::string str(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "NA";
  return v.dump();
}

struct Section {
  std::string name;   // CSV stem
  std::string title;
  Table table;
};

class Builder {
 public:
  explicit Builder(std::vector<Json> rows) : rows_(std::move(rows)) {}

  std::vector<Json> all(const std::string& type) const { return records::of_type(rows_, type); }

  std::vector<std::string> model_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : all("lm")) ids.push_back(r["model_id"].get<std::string>());
    return ids;
  }

  Table training() const {
    const auto lm = all("lm");
    if (lm.empty()) return {};
    std::map<std::string, Json> sel;
    for (const auto& s : all("sae_selection")) sel[s["model_id"].get<std::string>()] = s;
    Table t{{"model", "d_model", "layers", "final_loss", "heldout_exact", "heldout_refusal", "sae_variant", "sae_l0"}};
    for (const auto& r : lm) {
      const std::string id = r["model_id"].get<std::string>();
      const bool has = sel.count(id) != 0;
      t.push_back({id, str(r["d_model"]), str(r["n_layers"]), num(r["final_loss"], 4), percent(r["heldout_exact"]),
                   percent(r["heldout_refusal"]), has ? str(sel[id]["variant"]) : "NA",
                   has ? num(sel[id]["l0"], 2) : "NA"});
    }
    return t;
  }

  Table asr_table() const {
    const auto rows = all("asr");
    if (rows.empty()) return {};
    const auto ids = model_ids();
    Table t{{"attack", "configuration"}};
    for (const auto& id : ids) t[0].push_back(id);
    t[0].push_back("median");
    for (const auto& summary : all("asr_table")) {
      std::vector<std::string> line{str(summary["attack"]), str(summary["configuration"])};
      for (const auto& id : ids) {
        std::string cell = "NA";
        for (const auto& r : rows)
          if (r["attack"] == summary["attack"] && r["configuration"] == summary["configuration"] && r["model_id"] == id)
            cell = percent(r["asr"]["rate"]);
        line.push_back(cell);
      }
      line.push_back(percent(summary["median"]));
      t.push_back(line);
    }
    for (const auto& test : all("asr_test"))
      t.push_back({str(test["attack"]), "p(BASE vs SAE)", num(test["p_value"], 4)});
    return t;
  }

  Table transfer_summary() const {
    const auto rows = all("transfer_summary");
    if (rows.empty()) return {};
    Table t{{"attack", "grouping", "n", "median", "ci_lower", "ci_upper"}};
    for (const auto& r : rows) {
      if (r.contains("error")) {
        t.push_back({str(r["attack"]), str(r["grouping"]), "0", "NA", "NA", "NA"});
        continue;
      }
      t.push_back({str(r["attack"]), str(r["grouping"]), str(r["n"]), percent(r["median"]), percent(r["ci_lower"]),
                   percent(r["ci_upper"])});
    }
    return t;
  }

  /// Source x target ASR matrices keyed by attack.
  std::map<std::string, std::string> transfer_matrices() const {
    std::map<std::string, std::vector<Json>> by_attack;
    for (const auto& r : all("transfer_cell")) by_attack[r["attack"].get<std::string>()].push_back(r);
    std::map<std::string, std::string> out;
    for (const auto& [attack, cells] : by_attack) {
      TransferMatrix m;
      std::vector<std::string> labels;
      for (const auto& c : cells)
        if (std::find(labels.begin(), labels.end(), c["source"].get<std::string>()) == labels.end())
          labels.push_back(c["source"].get<std::string>());
      for (const auto& l : labels) {
        const auto slash = l.rfind('/');
        m.sources.push_back({l.substr(0, slash), parse_configuration(l.substr(slash + 1))});
      }
      m.targets = m.sources;
      m.cells.assign(labels.size(), std::vector<TransferCell>(labels.size()));
      for (const auto& c : cells) {
        const auto s = std::find(labels.begin(), labels.end(), c["source"].get<std::string>()) - labels.begin();
        const auto tt = std::find(labels.begin(), labels.end(), c["target"].get<std::string>()) - labels.begin();
        if (tt >= static_cast<std::ptrdiff_t>(labels.size()) || !c["evaluated"].get<bool>()) continue;
        m.cells[s][tt].evaluated = true;
        m.cells[s][tt].estimate.rate = c["asr"]["rate"].get<double>();
      }
      out[attack] = transfer_csv(m);
    }
    return out;
  }

  Table ablation(const std::string& type) const {
    const auto rows = all(type);
    if (rows.empty()) return {};
    Table t{{"model", "layer", "lambda", "l0", "r2", "heldout_refusal", "no_suffix_asr", "attack", "attack_asr",
             "mean_final_loss", "n"}};
    for (const auto& r : rows)
      t.push_back({str(r["model_id"]), str(r["layer"]), num(r["lambda"], 4), num(r["l0"], 2), num(r["r2"], 4),
                   percent(r["heldout_refusal"]), percent(r["prompt_asr"]), str(r["attack"]), percent(r["attack_asr"]),
                   num(r["mean_final_loss"], 4), str(r["n"])});
    return t;
  }

  Table spectral() const {
    const auto rows = all("spectral_comparison");
    if (rows.empty()) return {};
    Table t{{"scope", "metric", "base_mean", "base_std", "sae_mean", "sae_std", "delta_percent", "p_value"}};
    for (const auto& r : rows) {
      if (!r.contains("rows")) {
        t.push_back({str(r["scope"]), "error", "NA", "NA", "NA", "NA", "NA", "NA"});
        continue;
      }
      for (const auto& c : r["rows"])
        t.push_back({str(r["scope"]), str(c["metric"]), num(c["base_mean"], 4), num(c["base_std"], 4),
                     num(c["sae_mean"], 4), num(c["sae_std"], 4), num(c["delta_percent"], 2),
                     c["degenerate"].get<bool>() ? "degenerate" : num(c["p_value"], 4)});
    }
    return t;
  }

  Table loss() const {
    const auto rows = all("loss_comparison");
    if (rows.empty()) return {};
    Table t{{"attack", "scope", "n", "base_mean", "sae_mean", "sae_higher", "p_greater"}};
    for (const auto& r : rows)
      t.push_back({str(r["attack"]), str(r["scope"]), str(r["n"]), num(r["base_mean"], 4), num(r["sae_mean"], 4),
                   str(r["sae_higher"]), num(r["p_greater"], 4)});
    return t;
  }

  Table jaccard() const {
    const auto rows = all("overlap");
    if (rows.empty()) return {};
    Table t{{"model", "k", "group", "comparison", "pairs", "mean", "std"}};
    auto add = [&](const Json& r, const std::string& group, const std::string& cmp, const Json& p) {
      if (!p.is_object()) return;
      t.push_back({str(r["model_id"]), str(r["k"]), group, cmp, str(p["pairs"]), num(p["mean"], 4), num(p["std"], 4)});
    };
    for (const auto& r : rows) {
      if (r.contains("within")) {
        add(r, "all", "within", r["within"]);
        add(r, "all", "across", r["across"]);
        add(r, "all", "vs_random", r["vs_random"]);
      }
      if (r.contains("per_attack"))
        for (const auto& [attack, s] : r["per_attack"].items()) {
          if (!s.contains("within")) continue;
          add(r, attack, "within", s["within"]);
          add(r, attack, "vs_random", s["vs_random"]);
        }
    }
    return t;
  }

  Table blackbox() const {
    const auto rows = all("blackbox");
    if (rows.empty()) return {};
    Table t{{"model", "configuration", "successes", "trials", "asr"}};
    for (const auto& r : rows)
      t.push_back({str(r["model_id"]), str(r["configuration"]), str(r["asr"]["successes"]), str(r["asr"]["trials"]),
                   percent(r["asr"]["rate"])});
    return t;
  }

  Table monotonicity() const {
    const auto rows = all("monotonicity");
    if (rows.empty()) return {};
    Table t{{"attack", "runs", "violations"}};
    for (const auto& r : rows) t.push_back({str(r["attack"]), str(r["runs"]), str(r["violations"])});
    return t;
  }

 private:
  std::vector<Json> rows_;
};

}  // namespace

ReportOutcome export_report(const fs::path& run_dir) {
  ReportOutcome outcome;
  outcome.dir = run_dir / "report";
  std::vector<Json> rows;
  const fs::path results = run_dir / "results.jsonl";
  if (fs::exists(results)) rows = records::read_jsonl(results);
  const Builder b(std::move(rows));

  const std::vector<Section> sections{
      {"training", "Training", b.training()},
      {"table1_asr", "Attack success rate (%)", b.asr_table()},
      {"table2_transfer", "Transfer by grouping (%)", b.transfer_summary()},
      {"table3_sparsity", "Sparsity ablation", b.ablation("ablation_sparsity")},
      {"table4_layers", "Layer ablation", b.ablation("ablation_layer")},
      {"table6_spectral", "Gradient spectrum, BASE vs SAE", b.spectral()},
      {"loss", "Final target loss, SAE vs BASE", b.loss()},
      {"jaccard", "Feature overlap", b.jaccard()},
      {"blackbox", "Black-box prompts", b.blackbox()},
      {"monotonicity", "GCG best-loss monotonicity", b.monotonicity()},
  };

  fs::create_directories(outcome.dir);
  std::string md = "# Run report\n\n";
  for (const auto& s : sections) {
    md += "## " + s.title + "\n\n";
    if (s.table.empty()) {
      md += "_absent: no records for this section_\n\n";
      outcome.missing.push_back(s.name);
      continue;
    }
    records::write_text(outcome.dir / (s.name + ".csv"), csv(s.table));
    md += markdown(s.table) + "\n";
    outcome.present.push_back(s.name);
  }

  const auto matrices = b.transfer_matrices();
  md += "## Transfer matrices\n\n";
  if (matrices.empty()) {
    md += "_absent: no records for this section_\n\n";
    outcome.missing.push_back("transfer_matrix");
  }
  for (const auto& [attack, text] : matrices) {
    const std::string name = "transfer_" + attack;
    records::write_text(outcome.dir / (name + ".csv"), text);
    md += "- " + attack + ": `" + name + ".csv`\n";
    outcome.present.push_back(name);
  }
  records::write_text(outcome.dir / "report.md", md);
  return outcome;
}

}  // namespace saelab
