#include "sdnet/report.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

namespace {

void mean_sd(const std::vector<double>& xs, double& mean, double& sd) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    mean = acc / static_cast<double>(xs.size());
    if (xs.size() < 2) {
        sd = 0.0;
        return;
    }
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(xs.size() - 1));
}

}  // namespace

MetricReport MetricReport::from_runs(std::vector<RunMetrics> runs) {
    if (runs.empty()) throw ContractError("MetricReport: no runs");
    MetricReport r;
    r.per_run = std::move(runs);
    std::vector<double> dice, jaccard;
    for (const auto& m : r.per_run) {
        dice.push_back(m.dice);
        jaccard.push_back(m.jaccard);
    }
    mean_sd(dice, r.mean_dice, r.sd_dice);
    mean_sd(jaccard, r.mean_jaccard, r.sd_jaccard);
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& m : per_run)
        j["runs"].push_back({{"dice", m.dice}, {"jaccard", m.jaccard}});
    j["dice"] = {{"mean", mean_dice}, {"sd", sd_dice}};
    j["jaccard"] = {{"mean", mean_jaccard}, {"sd", sd_jaccard}};
    return j.dump(2) + "\n";
}

std::string MetricReport::table() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %-14s %-14s\n%-10s %.2f±%.2f    %.2f±%.2f\n",
                  "metric", "Dice", "Jaccard", "score(%)", mean_dice * 100.0, sd_dice * 100.0,
                  mean_jaccard * 100.0, sd_jaccard * 100.0);
    return buf;
}

}  // namespace sdnet
