#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcnet/config.hpp"
#include "rcnet/data.hpp"

namespace rcnet {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitCheckpoint = 4,
  kExitCheckFailed = 5,
};

// A numerical self-check (e.g. expansion equivalence) did not pass.
class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Datasets {
  Dataset train;
  Dataset test;
};

// Builds or loads the train/test splits described by the [data] section.
Datasets load_datasets(const ExperimentConfig& cfg);

// Entry point shared by the executable and the tests. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// CSV headers written by the commands.
std::string metrics_csv_header(const std::string& metric, const std::vector<int>& support);
inline constexpr const char* kIterationsCsvHeader = "iteration,epoch,step,loss,grad_norm_pre,grad_norm_post";
inline constexpr const char* kEvalCsvHeader = "metric,step,value,flops";
inline constexpr const char* kBnCsvHeader =
    "module,group,step,unroll,slot,channel,gamma,beta,running_mean,running_var";
std::string cost_csv_header(int max_step);

}  // namespace rcnet
