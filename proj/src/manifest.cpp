#include "eventfm/manifest.hpp"

#include <nlohmann/json.hpp>

#include "eventfm/common.hpp"

namespace eventfm {

using ordered_json = nlohmann::ordered_json;

void add_input(RunManifest& m, const std::string& path) {
    m.input_hashes[path] = hash_hex(content_hash(path));
}

void add_output(RunManifest& m, const std::string& path) {
    m.output_hashes[path] = hash_hex(content_hash(path));
}

void write_manifest(const RunManifest& m, const std::string& path) {
    ordered_json j;
    j["tool_version"] = m.tool_version;
    j["subcommand"] = m.subcommand;
    j["seed"] = m.seed;
    ordered_json args;
    for (const auto& [k, v] : m.args) args[k] = v;
    j["args"] = std::move(args);
    ordered_json inputs;
    for (const auto& [k, v] : m.input_hashes) inputs[k] = v;
    j["inputs"] = std::move(inputs);
    ordered_json outputs;
    for (const auto& [k, v] : m.output_hashes) outputs[k] = v;
    j["outputs"] = std::move(outputs);
    write_file(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const std::string& path) {
    auto j = ordered_json::parse(read_file(path));
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.subcommand = j.at("subcommand").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    for (auto it = j.at("args").begin(); it != j.at("args").end(); ++it)
        m.args[it.key()] = it.value().get<std::string>();
    for (auto it = j.at("inputs").begin(); it != j.at("inputs").end(); ++it)
        m.input_hashes[it.key()] = it.value().get<std::string>();
    for (auto it = j.at("outputs").begin(); it != j.at("outputs").end(); ++it)
        m.output_hashes[it.key()] = it.value().get<std::string>();
    return m;
}

}  // namespace eventfm
