#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dqkit/simulator.hpp"

namespace dqkit {

// On-disk layout for a dataset written under `base`:
//   base.json           header: config, p_nominal, p_actual, assignments and digest
//   base.ndjson         main sessions, one step per line
//   base.holdout.ndjson holdout sessions
// Step lines carry viewer_id, step_index, creator_id, action, reward and
// cumulative_watch. Optional keys: state (tabular logs), and on the last step of
// a session terminal / truncated.
struct DatasetPaths {
    std::filesystem::path header, steps, holdout;
    static DatasetPaths from_base(const std::filesystem::path& base);
};

std::string assignments_digest(const std::vector<std::uint8_t>& assignments);

std::string sim_config_to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const std::string& text);

void write_steps(std::ostream& out, const std::vector<SessionLog>& sessions);
// Sessions are delimited by step_index restarting at 0 or viewer_id changing.
std::vector<SessionLog> read_steps(std::istream& in);

void write_dataset(const ExperimentDataset& ds, const std::filesystem::path& base);
// Accepts either the header path or the base path. Validates the digest and the
// action/assignment consistency of every step.
ExperimentDataset read_dataset(const std::filesystem::path& header_or_base);

}  // namespace dqkit
