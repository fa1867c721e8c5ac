#pragma once

#include "afo/optimizer.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace afo::harness {

inline constexpr std::string_view kCsvHeader =
    "run_id,config_hash,algo,seed,iter,client,excess_loss,test_loss,grad_sq_norm,active_set_size,"
    "weight_mass,sigma_eff_sq,in_cluster_weight,out_cluster_weight,grad_evals_total";

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// 17 significant digits, scientific notation; nan / inf / -inf otherwise.
std::string format_double(double x);

std::string run_id(const std::string& algo, std::uint64_t seed);

/// CSV text (header plus one line per row) for one run.
std::string metrics_csv(const std::string& run_id, const std::string& config_hash, const std::string& algo,
                        std::uint64_t seed, const std::vector<MetricRow>& rows);

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace afo::harness
