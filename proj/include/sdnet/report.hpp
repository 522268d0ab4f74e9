#pragma once

#include <string>
#include <vector>

namespace sdnet {

struct RunMetrics {
    double dice = 0.0;
    double jaccard = 0.0;
};

// Per-run scores plus mean and sample standard deviation, mirroring the
// "mean±sd over 5 runs" reporting convention.
struct MetricReport {
    std::vector<RunMetrics> per_run;
    double mean_dice = 0.0, sd_dice = 0.0;
    double mean_jaccard = 0.0, sd_jaccard = 0.0;

    static MetricReport from_runs(std::vector<RunMetrics> runs);

    std::string to_json() const;        // stable key order
    std::string table() const;          // "94.10±0.36"-style percent table
};

}  // namespace sdnet
