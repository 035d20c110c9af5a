#pragma once

#include <ostream>
#include <utility>

#include "dpcn/cli/config.hpp"
#include "dpcn/data/dataset.hpp"

namespace dpcn::cli {

/// Train and test splits for a config, normalised with training-split
/// channel statistics.
std::pair<data::ImageDataset, data::ImageDataset> load_datasets(const ExperimentConfig& config);

/// Entry point of the `dpcn` tool: train, eval, gradcam, compare, gen-data.
/// Returns the process exit status; diagnostics go to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dpcn::cli
