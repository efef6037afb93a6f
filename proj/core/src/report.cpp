#include <cstdio>
#include <sstream>

#include "wsforge/error.hpp"
#include "wsforge/pipeline.hpp"

namespace wsforge {

using nlohmann::json;

namespace {

json tally_to_json(const LfErrorTally& t) {
  return {{"launch_failures", t.launch_failures},
          {"timeouts", t.timeouts},
          {"out_of_range", t.out_of_range},
          {"crashes", t.crashes},
          {"messages", t.messages}};
}

LfErrorTally tally_from_json(const json& j) {
  LfErrorTally t;
  t.launch_failures = j.at("launch_failures").get<std::size_t>();
  t.timeouts = j.at("timeouts").get<std::size_t>();
  t.out_of_range = j.at("out_of_range").get<std::size_t>();
  t.crashes = j.at("crashes").get<std::size_t>();
  t.messages = j.at("messages").get<std::vector<std::string>>();
  return t;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string cell(const std::string& s, int width) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%*s", width, s.c_str());
  return buf;
}

std::string model_header(ModelKind kind, bool with_lr) {
  std::string name(to_string(kind));
  for (char& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return with_lr ? name + "+LR" : name;
}

}  // namespace

json report_to_json(const RunReport& report) {
  json stats = json::array();
  for (const auto& s : report.lf_stats) stats.push_back({{"lf_set", s.lf_set}, {"stats", stats_to_json(s.stats)}});
  json label_models = json::array();
  for (const auto& row : report.label_models) {
    json scores = json::array();
    for (const auto& s : row.scores) scores.push_back({{"model", to_string(s.kind)}, {"metric", s.metric}});
    label_models.push_back({{"lf_set", row.lf_set},
                            {"n_lfs", row.n_lfs},
                            {"scores", scores},
                            {"average", row.average},
                            {"coverage", row.coverage}});
  }
  json end_models = json::array();
  for (const auto& row : report.end_models) {
    json evals = json::array();
    for (const auto& e : row.evals) evals.push_back({{"model", to_string(e.kind)}, {"eval", eval_to_json(e.eval)}});
    end_models.push_back({{"lf_set", row.lf_set},
                          {"n_lfs", row.n_lfs},
                          {"evals", evals},
                          {"average", row.average},
                          {"coverage", row.coverage}});
  }
  json errors = json::array();
  for (const auto& e : report.errors)
    errors.push_back({{"lf_set", e.lf_set}, {"lf", e.lf_name}, {"tally", tally_to_json(e.tally)}});
  return {{"metric", report.metric},
          {"combine_mode", report.combine_mode ? json(*report.combine_mode) : json(nullptr)},
          {"lf_stats", stats},
          {"label_models", label_models},
          {"end_models", end_models},
          {"errors", errors},
          {"warnings", report.warnings},
          {"config", report.config}};
}

RunReport report_from_json(const json& doc) {
  RunReport r;
  try {
    r.metric = doc.at("metric").get<std::string>();
    if (!doc.at("combine_mode").is_null()) r.combine_mode = doc["combine_mode"].get<std::string>();
    for (const auto& s : doc.at("lf_stats")) r.lf_stats.push_back({s.at("lf_set"), stats_from_json(s.at("stats"))});
    for (const auto& j : doc.at("label_models")) {
      LabelModelRow row;
      row.lf_set = j.at("lf_set").get<std::string>();
      row.n_lfs = j.at("n_lfs").get<std::size_t>();
      for (const auto& s : j.at("scores"))
        row.scores.push_back({parse_model_kind(s.at("model").get<std::string>()), s.at("metric").get<double>()});
      row.average = j.at("average").get<double>();
      row.coverage = j.at("coverage").get<double>();
      r.label_models.push_back(std::move(row));
    }
    for (const auto& j : doc.at("end_models")) {
      EndModelRow row;
      row.lf_set = j.at("lf_set").get<std::string>();
      row.n_lfs = j.at("n_lfs").get<std::string>();
      for (const auto& e : j.at("evals"))
        row.evals.push_back({parse_model_kind(e.at("model").get<std::string>()), eval_from_json(e.at("eval"))});
      row.average = j.at("average").get<double>();
      row.coverage = j.at("coverage").get<double>();
      r.end_models.push_back(std::move(row));
    }
    for (const auto& e : doc.at("errors"))
      r.errors.push_back({e.at("lf_set").get<std::string>(), e.at("lf").get<std::string>(), tally_from_json(e.at("tally"))});
    r.warnings = doc.at("warnings").get<std::vector<std::string>>();
    r.config = doc.at("config");
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed report: ") + ex.what());
  }
  return r;
}

std::string render_report_text(const RunReport& report) {
  std::ostringstream out;
  for (const auto& w : report.warnings) out << "warning: " << w << '\n';
  if (!report.warnings.empty()) out << '\n';

  out << "LF statistics\n";
  for (const auto& s : report.lf_stats) {
    out << "[" << s.lf_set << "]\n";
    if (s.stats.m == 0) out << "warning: empty LF set, m=0\n";
    out << render_stats_table(s.stats, true);
  }
  out << "accuracy is measured over each LF's covered points (denominator n would scale it by coverage)\n";

  const std::string metric = report.metric == "f1" ? "F1" : "Accuracy";
  if (!report.label_models.empty()) {
    out << "\nLabel models (" << metric << ")\n";
    out << cell("", 14) << cell("#LFs", 6);
    for (const auto& s : report.label_models.front().scores) out << cell(model_header(s.kind, false), 9);
    out << cell("Average", 9) << cell("Coverage", 10) << '\n';
    for (const auto& row : report.label_models) {
      out << cell(row.lf_set, 14) << cell(std::to_string(row.n_lfs), 6);
      for (const auto& s : row.scores) out << cell(fmt(s.metric), 9);
      out << cell(fmt(row.average), 9) << cell(fmt(row.coverage), 10) << '\n';
    }
  }

  if (!report.end_models.empty()) {
    out << "\nEnd model (" << metric << ")";
    if (report.combine_mode) out << ", combine mode: " << *report.combine_mode;
    out << '\n' << cell("", 14) << cell("#LFs", 8);
    for (const auto& e : report.end_models.front().evals) out << cell(model_header(e.kind, true), 9);
    out << cell("Average", 9) << cell("Coverage", 10) << '\n';
    for (const auto& row : report.end_models) {
      out << cell(row.lf_set, 14) << cell(row.n_lfs, 8);
      for (const auto& e : row.evals) out << cell(fmt(e.eval.f1_binary ? *e.eval.f1_binary : e.eval.accuracy), 9);
      out << cell(fmt(row.average), 9) << cell(fmt(row.coverage), 10) << '\n';
    }
  }

  if (!report.errors.empty()) {
    out << "\nLF errors\n";
    for (const auto& e : report.errors)
      out << "  " << e.lf_set << "/" << e.lf_name << ": launch " << e.tally.launch_failures << ", timeout "
          << e.tally.timeouts << ", out-of-range " << e.tally.out_of_range << ", crash " << e.tally.crashes << '\n';
  }
  return out.str();
}

}  // namespace wsforge
