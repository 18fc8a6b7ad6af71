#include "cll/report.hpp"

#include <algorithm>
#include <fstream>

namespace cll {

Json to_json(const RunConfig& config) {
  Json j = Json::object();
  for (const auto& [k, v] : config_entries(config)) j[k] = v;
  return j;
}

Json to_json(const NetworkSpec& spec) {
  return Json{{"channels", spec.channels},
              {"num_blocks", spec.num_blocks},
              {"kernel_size", spec.kernel_size},
              {"image_channels", spec.image_channels}};
}

Json to_json(const ProviderConfig& providers) {
  Json j{{"mode", to_string(providers.mode)}};
  if (providers.mode == ProviderMode::ftn) {
    j["groups"] = providers.ftn.groups;
    j["depth"] = providers.ftn.depth;
    j["exclude_last"] = providers.exclude_last;
  }
  return j;
}

Json to_json(const PhaseResult& r) {
  Json j{{"name", r.name},
         {"steps", r.losses.size()},
         {"sigma", r.sigma * 255.0},
         {"alpha", r.alpha},
         {"val_psnr_before", r.val_psnr_before},
         {"val_psnr_after", r.val_psnr_after},
         {"seconds", r.seconds}};
  if (!r.losses.empty()) {
    j["loss_first"] = r.losses.front();
    j["loss_last"] = r.losses.back();
    j["loss_min"] = *std::min_element(r.losses.begin(), r.losses.end());
  }
  return j;
}

Json to_json(const SimilarityReport& r) {
  Json layers = Json::array();
  for (const auto& l : r.layers) {
    layers.push_back(Json{{"layer", l.layer},
                          {"mae", l.mae},
                          {"cosine", l.cosine},
                          {"filters", l.filters},
                          {"zero_norm", l.zero_norm}});
  }
  return Json{{"mae_unweighted", r.mae_unweighted},     {"mae_weighted", r.mae_weighted},
              {"cosine_unweighted", r.cosine_unweighted}, {"cosine_weighted", r.cosine_weighted},
              {"zero_norm_filters", r.zero_norm},        {"layers", layers}};
}

Json to_json(const MacsReport& r) {
  Json comps = Json::array();
  for (const auto& c : r.components) {
    comps.push_back(Json{{"component", c.name}, {"macs", c.macs}, {"overhead_pct", c.overhead_pct}, {"params", c.params}});
  }
  return Json{{"height", r.height},
              {"width", r.width},
              {"baseline_macs", r.baseline},
              {"baseline_params", r.baseline_params},
              {"paper_formula_discrepancy", r.paper_formula_discrepancy},
              {"components", comps}};
}

Json to_json(const SweepResult& r) {
  Json rows = Json::array();
  for (std::size_t s = 0; s < r.sigmas.size(); ++s) {
    Json row{{"sigma", r.sigmas[s] * 255.0}};
    if (s < r.argmax_alpha.size()) {
      row["argmax_alpha"] = r.argmax_alpha[s];
      row["ideal_alpha"] = r.ideal_alpha[s];
      const auto idx = static_cast<std::size_t>(std::lround(r.argmax_alpha[s] * (r.alphas.size() - 1)));
      row["best_psnr"] = r.at(s, idx);
    }
    row["psnr_alpha0"] = r.at(s, 0);
    row["psnr_alpha1"] = r.at(s, r.alphas.size() - 1);
    rows.push_back(row);
  }
  return Json{{"alpha_points", r.alphas.size()}, {"max_deviation", r.max_deviation}, {"sigmas", rows}};
}

Json make_report(const std::string& command, const RunConfig& config) {
  return Json{{"command", command}, {"config", to_json(config)}};
}

void write_json(const Json& value, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << value.dump(2) << '\n';
  if (!os) throw Error("write to " + path.string() + " failed");
}

}  // namespace cll
