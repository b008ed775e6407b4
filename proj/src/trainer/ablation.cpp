#include "dmf/trainer/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace dmf::trainer {

const std::vector<AblationMethod>& ablation_methods() {
  static const std::vector<AblationMethod> methods = {
      {"Base.", false, false, false},
      {"w/ Text", true, false, true},
      {"w/ Image", true, true, false},
      {"w/ Text&Image", true, true, true},
  };
  return methods;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double AblationRow::median_map() const {
  std::vector<double> v;
  for (const auto& r : reports) v.push_back(r.map);
  return median(v);
}

double AblationRow::median_rank(int k) const {
  std::vector<double> v;
  for (const auto& r : reports) v.push_back(r.rank_at(k));
  return median(v);
}

AblationResult run_ablation(const synth::Dataset& data, const RunConfig& cfg, int seeds,
                            const std::function<void(const std::string&)>& progress) {
  if (seeds < 1) throw ConfigError("ablation: seeds must be >= 1");
  AblationResult res;
  res.config = to_json(cfg);
  for (const auto& m : ablation_methods()) res.rows.push_back({m.name, {}, {}});

  for (int s = 0; s < seeds; ++s) {
    RunConfig run = cfg;
    run.train.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
    for (std::size_t i = 0; i < ablation_methods().size(); ++i) {
      const auto& m = ablation_methods()[i];
      Checkpoint fine;
      if (m.pretrain) {
        StageOptions po;
        po.use_image = m.use_image;
        po.use_text = m.use_text;
        const Checkpoint pre = pretrain(data, run, po);
        fine = finetune(data, &pre, run);
      } else {
        fine = finetune(data, nullptr, run);
      }
      const auto q = eval::extract_features(data.query_images, fine.params, run.model);
      const auto g = eval::extract_features(data.gallery_images, fine.params, run.model);
      eval::EvalReport rep = eval::evaluate(q, g, run.eval.max_rank);
      rep.config = to_json(run);
      res.rows[i].seeds.push_back(run.train.seed);
      res.rows[i].reports.push_back(std::move(rep));
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s seed=%llu mAP=%.4f rank1=%.4f", m.name.c_str(),
                      static_cast<unsigned long long>(run.train.seed), res.rows[i].reports.back().map,
                      res.rows[i].reports.back().rank_at(1));
        progress(buf);
      }
    }
  }
  return res;
}

nlohmann::json to_json(const AblationResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t i = 0; i < row.reports.size(); ++i)
      per.push_back({{"seed", row.seeds[i]},
                     {"map", row.reports[i].map},
                     {"rank1", row.reports[i].rank_at(1)},
                     {"rank5", row.reports[i].rank_at(5)},
                     {"rank10", row.reports[i].rank_at(10)}});
    rows.push_back({{"method", row.method},
                    {"map", row.median_map()},
                    {"rank1", row.median_rank(1)},
                    {"rank5", row.median_rank(5)},
                    {"rank10", row.median_rank(10)},
                    {"per_seed", per}});
  }
  return {{"aggregate", "median"}, {"rows", rows}, {"config", r.config}};
}

std::string format_table(const AblationResult& r) {
  std::ostringstream os;
  os << eval::format_table_header() << "\n";
  for (const auto& row : r.rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-16s %7.1f %7.1f %7.1f %7.1f", row.method.c_str(), 100.0 * row.median_rank(1),
                  100.0 * row.median_rank(5), 100.0 * row.median_rank(10), 100.0 * row.median_map());
    os << buf << "\n";
  }
  return os.str();
}

}  // namespace dmf::trainer
