// bexg command-line front end. Each subcommand maps its flags onto config
// keys; values from --config are read first and flags override them.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "bexg/pipeline.hpp"

namespace {

struct Invocation {
    std::string config_path;
    std::string out = "out";
    std::map<std::string, std::string> flags;
};

}  // namespace

int main(int argc, char** argv) {
    using namespace bexg;
    CLI::App app{"bexg: combinatorial growth kernels, simulations and spatial rank analysis"};
    app.require_subcommand(1);
    std::map<std::string, Invocation> inv;

    for (const auto& info : pipeline::commands()) {
        auto* sub = app.add_subcommand(info.name, info.help);
        auto& slot = inv[info.name];
        sub->add_option("--config", slot.config_path, "key = value config file");
        sub->add_option("--out", slot.out, "output directory (created if absent)")->capture_default_str();
        for (const auto& k : info.keys) {
            sub->add_option_function<std::string>(
                "--" + k.key, [&slot, key = k.key](const std::string& v) { slot.flags[key] = v; }, k.help);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    for (auto* sub : app.get_subcommands()) {
        const auto& name = sub->get_name();
        const auto& slot = inv[name];
        try {
            io::Config cfg = slot.config_path.empty() ? io::Config{} : io::Config::load(slot.config_path);
            for (const auto& [k, v] : slot.flags) cfg.set(k, v);
            const int code = pipeline::run(name, cfg, slot.out);
            if (code != 0) std::cerr << "bexg " << name << ": completed with errors, see " << slot.out << "/errors.json\n";
            return code;
        } catch (const ParseError& e) {
            std::cerr << "bexg " << name << ": parse error: " << e.what() << "\n";
            return 2;
        } catch (const ConfigError& e) {
            std::cerr << "bexg " << name << ": " << e.what() << "\n";
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "bexg " << name << ": " << e.what() << "\n";
            return 4;
        }
    }
    return 0;
}
