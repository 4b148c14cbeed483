#ifndef RLAB_EXPERIMENT_HPP
#define RLAB_EXPERIMENT_HPP

// Batch experiment driver: configuration parsing, measure/lattice assembly,
// the comparability / main-sum / bilipschitz / capacity / corona experiments,
// and deterministic CSV + JSON-lines report emission.

#include <map>
#include <string>

#include "rlab/corona.hpp"

namespace rlab {

// Line-oriented key=value configuration; command-line overrides win.
struct ExperimentConfig {
    std::map<std::string, std::string> kv;

    static ExperimentConfig from_file(const std::string& path);
    void apply_override(const std::string& key_eq_value);

    std::string get(const std::string& key, const std::string& fallback = "") const;
    double get_num(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_flag(const std::string& key, bool fallback) const;
};

// One report row; the anchor names the inequality the row instantiates.
struct ReportRow {
    std::string instance;
    std::string anchor;
    double lhs = 0;
    double rhs = 0;
    double constant = 0;  // lhs/rhs where meaningful
    std::string note;
};

struct ExperimentReport {
    std::string command;
    std::string profile;
    int schema = 1;
    std::vector<ReportRow> rows;
    std::vector<std::string> artifacts;  // extra files written

    void write_csv(std::ostream& os) const;
    void write_jsonl(std::ostream& os) const;
    // writes <out_prefix>_report.csv and .jsonl
    void save(const std::string& out_prefix) const;
};

// Measure assembly from config keys (kind=, count=, generation=, ...).
AtomicMeasure measure_from_config(const ExperimentConfig& cfg);
LatticeParams lattice_from_config(const ExperimentConfig& cfg);
StoppingConfig stopping_from_config(const ExperimentConfig& cfg, int n);
ScaleGrid grid_from_config(const ExperimentConfig& cfg, const AtomicMeasure& mu);
RieszFieldOptions riesz_from_config(const ExperimentConfig& cfg);

// Experiments. Each returns the full report; `save` is the caller's choice.
ExperimentReport cmd_comparability(const ExperimentConfig& cfg);
ExperimentReport cmd_main_prop(const ExperimentConfig& cfg);
ExperimentReport cmd_bilip(const ExperimentConfig& cfg);
ExperimentReport cmd_capacity(const ExperimentConfig& cfg);
ExperimentReport cmd_corona_trace(const ExperimentConfig& cfg);
ExperimentReport cmd_analyze(const ExperimentConfig& cfg);

}  // namespace rlab

#endif
