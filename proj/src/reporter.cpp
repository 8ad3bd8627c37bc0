#include "dpguard/reporter.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dpguard::reporter {

using json = nlohmann::json;

namespace {

double pct(std::size_t part, std::size_t whole) {
  return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

}  // namespace

EmpiricalReport aggregate(const std::vector<detector::DetectionResult>& results) {
  struct Acc {
    std::set<std::string> groups;
    std::set<std::string> dp_groups;
    std::size_t images = 0;
    std::vector<std::size_t> counts;
    std::map<int, std::size_t> per_category;
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : results) {
    Acc& a = acc[r.platform ? to_string(*r.platform) : "unknown"];
    a.groups.insert(r.group_id);
    ++a.images;
    if (!r.is_deceptive()) continue;
    a.dp_groups.insert(r.group_id);
    std::size_t n = 0;
    for (int c : r.categories) {
      if (c == kNoDp) continue;
      ++n;
      ++a.per_category[c];
    }
    a.counts.push_back(n);
  }

  EmpiricalReport report;
  for (auto& [name, a] : acc) {
    PlatformReport p;
    p.total_groups = a.groups.size();
    p.groups_with_dp = a.dp_groups.size();
    p.pct_groups_with_dp = pct(p.groups_with_dp, p.total_groups);
    p.total_images = a.images;
    p.images_with_dp = a.counts.size();
    p.pct_images_with_dp = pct(p.images_with_dp, p.total_images);
    p.category_instances = a.per_category;
    const std::size_t n = a.counts.size();
    if (n > 0) {
      double sum = 0.0;
      std::size_t ones = 0, twos = 0;
      for (auto c : a.counts) {
        sum += static_cast<double>(c);
        ones += c == 1;
        twos += c == 2;
      }
      const double mean = sum / static_cast<double>(n);
      p.mean_categories = mean;
      if (n > 1) {
        double ss = 0.0;
        for (auto c : a.counts) ss += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
        p.std_categories = std::sqrt(ss / static_cast<double>(n - 1));
      }
      p.buckets = Buckets{pct(ones, n), pct(twos, n), pct(n - ones - twos, n)};
    }
    report.platforms[name] = std::move(p);
  }
  return report;
}

Format parse_format(std::string_view name) {
  if (name == "json") return Format::kJson;
  if (name == "csv") return Format::kCsv;
  if (name == "markdown" || name == "md") return Format::kMarkdown;
  throw Error(ErrorKind::kValidation, "unknown report format '" + std::string(name) + "' (json, csv, markdown)");
}

const char* extension(Format f) {
  switch (f) {
    case Format::kJson: return "json";
    case Format::kCsv: return "csv";
    case Format::kMarkdown: return "md";
  }
  return "txt";
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const EmpiricalReport& report) {
  json out = json::object();
  for (const auto& [name, p] : report.platforms) {
    json cats = json::object();
    for (const auto& [id, n] : p.category_instances) cats[std::to_string(id)] = n;
    out[name] = {{"total_groups", p.total_groups},
                 {"groups_with_dp", p.groups_with_dp},
                 {"pct_groups_with_dp", p.pct_groups_with_dp},
                 {"total_images", p.total_images},
                 {"images_with_dp", p.images_with_dp},
                 {"pct_images_with_dp", p.pct_images_with_dp},
                 {"mean_categories", opt(p.mean_categories)},
                 {"std_categories", opt(p.std_categories)},
                 {"buckets", p.buckets ? json{{"1", p.buckets->one}, {"2", p.buckets->two}, {">2", p.buckets->more}}
                                       : json(nullptr)},
                 {"category_instances", cats}};
  }
  return out;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fixed4(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string category_name(int id, const Taxonomy* taxonomy) {
  if (taxonomy && taxonomy->contains(id)) return taxonomy->at(id).name;
  return "category " + std::to_string(id);
}

std::vector<int> category_rows(const PlatformReport& p, const Taxonomy* taxonomy) {
  std::set<int> ids;
  if (taxonomy) {
    for (int id : taxonomy->active_dp_ids()) ids.insert(id);
  }
  for (const auto& [id, n] : p.category_instances) ids.insert(id);
  return {ids.begin(), ids.end()};
}

std::size_t count_of(const PlatformReport& p, int id) {
  auto it = p.category_instances.find(id);
  return it == p.category_instances.end() ? 0 : it->second;
}

std::string render_csv(const EmpiricalReport& report, const Taxonomy* taxonomy) {
  std::ostringstream out;
  out << "platform,metric,value\n";
  for (const auto& [name, p] : report.platforms) {
    const auto row = [&](const std::string& metric, const std::string& value) {
      out << csv_field(name) << ',' << csv_field(metric) << ',' << value << '\n';
    };
    row("total_groups", std::to_string(p.total_groups));
    row("groups_with_dp", std::to_string(p.groups_with_dp));
    row("pct_groups_with_dp", fixed2(p.pct_groups_with_dp));
    row("total_images", std::to_string(p.total_images));
    row("images_with_dp", std::to_string(p.images_with_dp));
    row("pct_images_with_dp", fixed2(p.pct_images_with_dp));
    row("mean_categories", fixed4(p.mean_categories));
    row("std_categories", fixed4(p.std_categories));
    row("pct_images_1_category", p.buckets ? fixed2(p.buckets->one) : "");
    row("pct_images_2_categories", p.buckets ? fixed2(p.buckets->two) : "");
    row("pct_images_gt2_categories", p.buckets ? fixed2(p.buckets->more) : "");
    for (int id : category_rows(p, taxonomy)) {
      row("instances:" + category_name(id, taxonomy), std::to_string(count_of(p, id)));
    }
  }
  return out.str();
}

std::string render_markdown(const EmpiricalReport& report, const Taxonomy* taxonomy) {
  std::ostringstream out;
  out << "# Deceptive pattern prevalence\n";
  for (const auto& [name, p] : report.platforms) {
    out << "\n## " << name << "\n\n";
    out << "| Metric | Value |\n|---|---|\n";
    out << "| Groups with DP | " << p.groups_with_dp << " / " << p.total_groups << " (" << fixed2(p.pct_groups_with_dp)
        << "%) |\n";
    out << "| Images with DP | " << p.images_with_dp << " / " << p.total_images << " (" << fixed2(p.pct_images_with_dp)
        << "%) |\n";
    out << "| Categories per deceptive image (mean) | " << (p.mean_categories ? fixed4(p.mean_categories) : "n/a")
        << " |\n";
    out << "| Categories per deceptive image (sample std) | " << (p.std_categories ? fixed4(p.std_categories) : "n/a")
        << " |\n";
    if (p.buckets) {
      out << "| Images with 1 / 2 / >2 categories | " << fixed2(p.buckets->one) << "% / " << fixed2(p.buckets->two)
          << "% / " << fixed2(p.buckets->more) << "% |\n";
    }
    out << "\n| Category | Instances |\n|---|---|\n";
    for (int id : category_rows(p, taxonomy)) {
      out << "| " << category_name(id, taxonomy) << " | " << count_of(p, id) << " |\n";
    }
  }
  return out.str();
}

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string render_report(const EmpiricalReport& report, Format format, const Taxonomy* taxonomy) {
  switch (format) {
    case Format::kJson: return to_json(report).dump(2) + "\n";
    case Format::kCsv: return render_csv(report, taxonomy);
    case Format::kMarkdown: return render_markdown(report, taxonomy);
  }
  throw Error(ErrorKind::kValidation, "unknown report format");
}

EmpiricalReport report_from_json(std::string_view text) {
  EmpiricalReport report;
  try {
    const json j = json::parse(text);
    for (const auto& [name, v] : j.items()) {
      PlatformReport p;
      p.total_groups = v.at("total_groups").get<std::size_t>();
      p.groups_with_dp = v.at("groups_with_dp").get<std::size_t>();
      p.pct_groups_with_dp = v.at("pct_groups_with_dp").get<double>();
      p.total_images = v.at("total_images").get<std::size_t>();
      p.images_with_dp = v.at("images_with_dp").get<std::size_t>();
      p.pct_images_with_dp = v.at("pct_images_with_dp").get<double>();
      p.mean_categories = opt_from(v, "mean_categories");
      p.std_categories = opt_from(v, "std_categories");
      if (v.contains("buckets") && !v.at("buckets").is_null()) {
        const auto& b = v.at("buckets");
        p.buckets = Buckets{b.at("1").get<double>(), b.at("2").get<double>(), b.at(">2").get<double>()};
      }
      for (const auto& [id, n] : v.at("category_instances").items()) p.category_instances[std::stoi(id)] = n.get<std::size_t>();
      report.platforms[name] = std::move(p);
    }
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, std::string("report: ") + e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("report: ") + e.what());
  }
  return report;
}

}  // namespace dpguard::reporter
