#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace eventfm {

// Every CLI run writes exactly one manifest; re-running from a manifest must
// reproduce bit-identical tabular artifacts.
struct RunManifest {
    std::string tool_version;
    std::string subcommand;
    std::map<std::string, std::string> args;          // resolved flag -> value
    uint64_t seed = 0;
    std::map<std::string, std::string> input_hashes;  // path -> fnv1a64 hex
    std::map<std::string, std::string> output_hashes;
};

void add_input(RunManifest& m, const std::string& path);
void add_output(RunManifest& m, const std::string& path);
void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

}  // namespace eventfm
