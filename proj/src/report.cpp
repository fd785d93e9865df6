#include <cmath>

#include <json.hpp>

#include "dne/ensemble.hpp"
#include "dne/error.hpp"

namespace dne {

using nlohmann::json;

namespace {

constexpr UqClass kClasses[] = {UqClass::CorrectLowUncertainty, UqClass::HighUncertainty,
                                UqClass::IncorrectLowUncertainty};

std::string_view vote_mode_name(VoteMode m) { return m == VoteMode::Majority ? "majority" : "mean_probability"; }

}  // namespace

std::string report_to_json(const UqReport& report) {
  json records = json::array();
  for (const UqRecord& r : report.records) {
    records.push_back(json{{"sample_id", r.sample_id},
                           {"true_label", to_string(r.true_label)},
                           {"p_tumor", r.p_tumor},
                           {"p_normal", r.p_normal},
                           {"entropy_bits", r.entropy_bits},
                           {"predicted_label", to_string(r.predicted_label)},
                           {"uq_class", to_string(r.uq_class)}});
  }
  json rows = json::object();
  for (UqClass c : kClasses) {
    json row = json::object();
    for (Label col : {Label::Tumor, Label::Normal}) {
      const UqCell& cell = report.summary.at(c, col);
      row[std::string(to_string(col))] = json{{"count", cell.count}, {"percent", cell.percent}};
    }
    rows[std::string(to_string(c))] = row;
  }
  json doc{{"method", report.method},
           {"ensemble_size", report.ensemble_size},
           {"threshold", report.threshold},
           {"vote_mode", vote_mode_name(report.vote_mode)},
           {"tie_rule", "normal"},
           {"mean_entropy_bits", report.mean_entropy()},
           {"records", records},
           {"summary",
            {{"columns", {"tumor", "normal"}},
             {"totals", {{"tumor", report.summary.totals[0]}, {"normal", report.summary.totals[1]}}},
             {"rows", rows}}}};
  return doc.dump(2) + "\n";
}

UqReport report_from_json(std::string_view text) {
  const auto violations = report_schema_violations(text);
  if (!violations.empty()) throw FormatError("UQ report does not match the schema: " + violations.front());
  const json doc = json::parse(text);
  UqReport report;
  report.method = doc.at("method").get<std::string>();
  report.ensemble_size = doc.at("ensemble_size").get<std::size_t>();
  report.threshold = doc.at("threshold").get<double>();
  report.vote_mode = doc.at("vote_mode").get<std::string>() == "majority" ? VoteMode::Majority
                                                                          : VoteMode::MeanProbability;
  for (const json& r : doc.at("records")) {
    UqRecord rec;
    rec.sample_id = r.at("sample_id").get<std::string>();
    rec.true_label = parse_label(r.at("true_label").get<std::string>());
    rec.p_tumor = r.at("p_tumor").get<double>();
    rec.p_normal = r.at("p_normal").get<double>();
    rec.entropy_bits = r.at("entropy_bits").get<double>();
    rec.predicted_label = parse_label(r.at("predicted_label").get<std::string>());
    rec.uq_class = parse_uq_class(r.at("uq_class").get<std::string>());
    report.records.push_back(std::move(rec));
  }
  report.summary = summarize(report.records);
  return report;
}

std::vector<std::string> report_schema_violations(std::string_view text) {
  std::vector<std::string> errors;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    return {std::string("not valid JSON: ") + e.what()};
  }
  auto require = [&errors](const json& obj, const std::string& where, const char* key,
                           bool (json::*is_type)() const noexcept, const char* type) -> const json* {
    if (!obj.is_object() || !obj.contains(key)) {
      errors.push_back(where + ": missing '" + key + "'");
      return nullptr;
    }
    const json& v = obj.at(key);
    if (!(v.*is_type)()) {
      errors.push_back(where + "." + key + ": expected " + type);
      return nullptr;
    }
    return &v;
  };
  auto is_label = [](const json& v) { return v.is_string() && (v == "tumor" || v == "normal"); };
  auto is_class = [](const json& v) {
    return v.is_string() &&
           (v == "correct_low_uncertainty" || v == "high_uncertainty" || v == "incorrect_low_uncertainty");
  };

  if (const json* m = require(doc, "$", "method", &json::is_string, "string")) {
    if (*m != "es_ensemble" && *m != "mc_dropout") errors.push_back("$.method: unknown method");
  }
  if (const json* n = require(doc, "$", "ensemble_size", &json::is_number_unsigned, "unsigned integer")) {
    if (n->get<std::size_t>() == 0) errors.push_back("$.ensemble_size: must be >= 1");
  }
  if (const json* t = require(doc, "$", "threshold", &json::is_number, "number")) {
    if (!(t->get<double>() >= 0.0)) errors.push_back("$.threshold: must be >= 0");
  }
  if (const json* v = require(doc, "$", "vote_mode", &json::is_string, "string")) {
    if (*v != "majority" && *v != "mean_probability") errors.push_back("$.vote_mode: unknown mode");
  }
  require(doc, "$", "tie_rule", &json::is_string, "string");
  require(doc, "$", "mean_entropy_bits", &json::is_number, "number");

  std::array<int, 2> label_counts{};
  if (const json* records = require(doc, "$", "records", &json::is_array, "array")) {
    for (std::size_t i = 0; i < records->size(); ++i) {
      const json& r = (*records)[i];
      const std::string where = "$.records[" + std::to_string(i) + "]";
      require(r, where, "sample_id", &json::is_string, "string");
      const json* truth = require(r, where, "true_label", &json::is_string, "string");
      const json* pt = require(r, where, "p_tumor", &json::is_number, "number");
      const json* pn = require(r, where, "p_normal", &json::is_number, "number");
      const json* s = require(r, where, "entropy_bits", &json::is_number, "number");
      const json* pred = require(r, where, "predicted_label", &json::is_string, "string");
      const json* c = require(r, where, "uq_class", &json::is_string, "string");
      if (truth && !is_label(*truth)) errors.push_back(where + ".true_label: not a label");
      if (pred && !is_label(*pred)) errors.push_back(where + ".predicted_label: not a label");
      if (c && !is_class(*c)) errors.push_back(where + ".uq_class: not a UQ class");
      if (pt && pn) {
        const double a = pt->get<double>();
        const double b = pn->get<double>();
        if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0 || std::abs(a + b - 1.0) > 1e-6) {
          errors.push_back(where + ": p_tumor and p_normal must be probabilities summing to 1");
        }
      }
      if (s && !(s->get<double>() >= 0.0 && s->get<double>() <= 1.0)) {
        errors.push_back(where + ".entropy_bits: must lie in [0, 1]");
      }
      if (truth && is_label(*truth)) ++label_counts[*truth == "tumor" ? 0 : 1];
    }
  }

  if (const json* summary = require(doc, "$", "summary", &json::is_object, "object")) {
    const json* totals = require(*summary, "$.summary", "totals", &json::is_object, "object");
    const json* rows = require(*summary, "$.summary", "rows", &json::is_object, "object");
    require(*summary, "$.summary", "columns", &json::is_array, "array");
    std::array<int, 2> column_sums{};
    if (rows) {
      for (UqClass c : kClasses) {
        const std::string name(to_string(c));
        const json* row = require(*rows, "$.summary.rows", name.c_str(), &json::is_object, "object");
        if (!row) continue;
        for (int col = 0; col < 2; ++col) {
          const char* label = col == 0 ? "tumor" : "normal";
          const std::string where = "$.summary.rows." + name;
          const json* cell = require(*row, where, label, &json::is_object, "object");
          if (!cell) continue;
          const json* count = require(*cell, where + "." + label, "count", &json::is_number_integer, "integer");
          require(*cell, where + "." + label, "percent", &json::is_number, "number");
          if (count) column_sums[col] += count->get<int>();
        }
      }
    }
    if (totals) {
      for (int col = 0; col < 2; ++col) {
        const char* label = col == 0 ? "tumor" : "normal";
        const json* total = require(*totals, "$.summary.totals", label, &json::is_number_integer, "integer");
        if (!total) continue;
        if (total->get<int>() != column_sums[col]) {
          errors.push_back(std::string("$.summary: ") + label + " column does not sum to its total");
        }
        if (total->get<int>() != label_counts[col]) {
          errors.push_back(std::string("$.summary.totals.") + label + ": does not match the records");
        }
      }
    }
  }
  return errors;
}

}  // namespace dne
