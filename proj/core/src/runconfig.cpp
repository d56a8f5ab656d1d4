#include "pour/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace pour {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ContractError("config: key '" + key + "' has non-numeric value '" + v + "'");
    }
    if (used != v.size())
        throw ContractError("config: key '" + key + "' has trailing characters in '" + v + "'");
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ContractError("config: key '" + key + "' has non-integer value '" + v + "'");
    }
    if (used != v.size())
        throw ContractError("config: key '" + key + "' has trailing characters in '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ContractError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

struct SchemaEntry {
    std::string key;
    std::string description;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::vector<SchemaEntry> build_schema() {
    std::vector<SchemaEntry> s;
    auto add = [&s](std::string key, std::string desc, auto getter, auto setter) {
        s.push_back({std::move(key), std::move(desc), getter, setter});
    };

    add("seed", "root seed; all randomness derives from named substreams of it",
        [](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) {
            c.seed = std::uint64_t(parse_int("seed", v));
        });

    add("phantom.size", "cubic phantom extent in voxels, divisible by 4",
        [](const RunConfig& c) { return std::to_string(c.phantom.size); },
        [](RunConfig& c, const std::string& v) {
            c.phantom.size = int(parse_int("phantom.size", v));
        });
    add("phantom.lesions_min", "minimum number of hot lesions per phantom",
        [](const RunConfig& c) { return std::to_string(c.phantom.lesions_min); },
        [](RunConfig& c, const std::string& v) {
            c.phantom.lesions_min = int(parse_int("phantom.lesions_min", v));
        });
    add("phantom.lesions_max", "maximum number of hot lesions per phantom",
        [](const RunConfig& c) { return std::to_string(c.phantom.lesions_max); },
        [](RunConfig& c, const std::string& v) {
            c.phantom.lesions_max = int(parse_int("phantom.lesions_max", v));
        });
    add("phantom.edge_sigma_vox", "Gaussian edge softening applied to ground truth, voxels",
        [](const RunConfig& c) { return fmt_double(c.phantom.edge_sigma_vox); },
        [](RunConfig& c, const std::string& v) {
            c.phantom.edge_sigma_vox = float(parse_double("phantom.edge_sigma_vox", v));
        });

    add("degrade.count_fraction", "fraction of full counts in (0, 1]",
        [](const RunConfig& c) { return fmt_double(c.degrade.count_fraction); },
        [](RunConfig& c, const std::string& v) {
            c.degrade.count_fraction = parse_double("degrade.count_fraction", v);
        });
    add("degrade.counts_scale",
        "expected events per unit activity at full counts; 0 disables resampling",
        [](const RunConfig& c) { return fmt_double(c.degrade.counts_scale); },
        [](RunConfig& c, const std::string& v) {
            c.degrade.counts_scale = parse_double("degrade.counts_scale", v);
        });
    add("degrade.noise_a", "attenuation noise amplitude at full counts, cm^-1",
        [](const RunConfig& c) { return fmt_double(c.degrade.noise_a); },
        [](RunConfig& c, const std::string& v) {
            c.degrade.noise_a = parse_double("degrade.noise_a", v);
        });
    add("degrade.crosstalk_c", "activity-structure leakage into attenuation, cm^-1",
        [](const RunConfig& c) { return fmt_double(c.degrade.crosstalk_c); },
        [](RunConfig& c, const std::string& v) {
            c.degrade.crosstalk_c = parse_double("degrade.crosstalk_c", v);
        });
    add("degrade.noise_sigma_vox", "spatial correlation of attenuation noise, voxels",
        [](const RunConfig& c) { return fmt_double(c.degrade.noise_sigma_vox); },
        [](RunConfig& c, const std::string& v) {
            c.degrade.noise_sigma_vox = parse_double("degrade.noise_sigma_vox", v);
        });
    add("degrade.fwhm_mm", "resolution loss applied to degraded volumes, mm FWHM",
        [](const RunConfig& c) { return fmt_double(c.degrade.fwhm_mm); },
        [](RunConfig& c, const std::string& v) {
            c.degrade.fwhm_mm = parse_double("degrade.fwhm_mm", v);
        });

    add("ournet.base_channels", "channel width C of the network branches",
        [](const RunConfig& c) { return std::to_string(c.cascade.ournet.base_channels); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.ournet.base_channels = int(parse_int("ournet.base_channels", v));
        });
    add("ournet.frb_rseb_count", "blocks per full-resolution restoration chain",
        [](const RunConfig& c) { return std::to_string(c.cascade.ournet.frb_rseb_count); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.ournet.frb_rseb_count = int(parse_int("ournet.frb_rseb_count", v));
        });
    add("ournet.se_reduction", "squeeze-and-excitation bottleneck reduction",
        [](const RunConfig& c) { return std::to_string(c.cascade.ournet.se_reduction); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.ournet.se_reduction = int(parse_int("ournet.se_reduction", v));
        });
    add("ournet.enable_unnet", "enable the downsample-first context branch",
        [](const RunConfig& c) { return c.cascade.ournet.enable_unnet ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
            c.cascade.ournet.enable_unnet = parse_bool("ournet.enable_unnet", v);
        });
    add("ournet.enable_ovnet", "enable the upsample-first detail branch",
        [](const RunConfig& c) { return c.cascade.ournet.enable_ovnet ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
            c.cascade.ournet.enable_ovnet = parse_bool("ournet.enable_ovnet", v);
        });

    add("train.steps", "optimizer steps per stage",
        [](const RunConfig& c) { return std::to_string(c.cascade.training.steps); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.steps = int(parse_int("train.steps", v));
        });
    add("train.lr", "Adam learning rate",
        [](const RunConfig& c) { return fmt_double(c.cascade.training.lr); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.lr = parse_double("train.lr", v);
        });
    add("train.beta1", "Adam first-moment decay",
        [](const RunConfig& c) { return fmt_double(c.cascade.training.beta1); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.beta1 = parse_double("train.beta1", v);
        });
    add("train.beta2", "Adam second-moment decay",
        [](const RunConfig& c) { return fmt_double(c.cascade.training.beta2); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.beta2 = parse_double("train.beta2", v);
        });
    add("train.batch_size", "patches per optimizer step",
        [](const RunConfig& c) { return std::to_string(c.cascade.training.batch_size); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.batch_size = int(parse_int("train.batch_size", v));
        });
    add("train.patches_per_volume", "random patches sampled per training case",
        [](const RunConfig& c) { return std::to_string(c.cascade.training.patches_per_volume); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.patches_per_volume =
                int(parse_int("train.patches_per_volume", v));
        });
    add("train.patch_size", "cubic patch extent, divisible by 4",
        [](const RunConfig& c) { return std::to_string(c.cascade.training.patch_size); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.patch_size = int(parse_int("train.patch_size", v));
        });
    add("train.stop_loss_ratio", "early stop once loss < ratio * initial; 0 disables",
        [](const RunConfig& c) { return fmt_double(c.cascade.training.stop_loss_ratio); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.training.stop_loss_ratio = parse_double("train.stop_loss_ratio", v);
        });

    add("cascade.n_cascades", "number of network stages",
        [](const RunConfig& c) { return std::to_string(c.cascade.n_cascades); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.n_cascades = int(parse_int("cascade.n_cascades", v));
        });
    add("cascade.match_presample", "atlas matching grid divisor (1 native, 2 half)",
        [](const RunConfig& c) { return std::to_string(c.cascade.match_presample); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.match_presample = int(parse_int("cascade.match_presample", v));
        });

    add("demons.pyramid_levels", "registration pyramid depth",
        [](const RunConfig& c) { return std::to_string(c.cascade.demons.pyramid_levels); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.demons.pyramid_levels = int(parse_int("demons.pyramid_levels", v));
        });
    add("demons.iterations", "comma-separated iteration counts, coarse to fine",
        [](const RunConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < c.cascade.demons.iterations_per_level.size(); ++i) {
                if (i) out += ",";
                out += std::to_string(c.cascade.demons.iterations_per_level[i]);
            }
            return out;
        },
        [](RunConfig& c, const std::string& v) {
            std::vector<int> its;
            std::stringstream ss(v);
            std::string part;
            while (std::getline(ss, part, ','))
                its.push_back(int(parse_int("demons.iterations", trim(part))));
            if (its.empty())
                throw ContractError("config: demons.iterations needs at least one count");
            c.cascade.demons.iterations_per_level = std::move(its);
        });
    add("demons.fluid_sigma", "smoothing of each velocity update, voxels",
        [](const RunConfig& c) { return fmt_double(c.cascade.demons.fluid_sigma); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.demons.fluid_sigma = parse_double("demons.fluid_sigma", v);
        });
    add("demons.diffusion_sigma", "smoothing of the accumulated field, voxels",
        [](const RunConfig& c) { return fmt_double(c.cascade.demons.diffusion_sigma); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.demons.diffusion_sigma = parse_double("demons.diffusion_sigma", v);
        });
    add("demons.sigma_x", "force normalization",
        [](const RunConfig& c) { return fmt_double(c.cascade.demons.sigma_x); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.demons.sigma_x = parse_double("demons.sigma_x", v);
        });
    add("demons.convergence_tol", "relative MSE change for early level exit",
        [](const RunConfig& c) { return fmt_double(c.cascade.demons.convergence_tol); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.demons.convergence_tol = parse_double("demons.convergence_tol", v);
        });
    add("demons.exp_squarings", "scaling-and-squaring steps in the field exponential",
        [](const RunConfig& c) { return std::to_string(c.cascade.demons.exp_squarings); },
        [](RunConfig& c, const std::string& v) {
            c.cascade.demons.exp_squarings = int(parse_int("demons.exp_squarings", v));
        });

    add("metrics.ssim_window", "cubic SSIM window extent",
        [](const RunConfig& c) { return std::to_string(c.ssim_window); },
        [](RunConfig& c, const std::string& v) {
            c.ssim_window = int(parse_int("metrics.ssim_window", v));
        });
    add("metrics.masked", "restrict rmse/psnr to body-mask voxels",
        [](const RunConfig& c) { return c.eval_masked ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
            c.eval_masked = parse_bool("metrics.masked", v);
        });
    return s;
}

const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> s = build_schema();
    return s;
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config: line " + std::to_string(lineno) +
                                " is not key = value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& entry : schema()) {
            if (entry.key == key) {
                entry.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) throw ContractError("config: unknown key '" + key + "'");
    }
    return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("config: cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str());
}

std::string dump_default_config() {
    const RunConfig defaults;
    std::string out;
    for (const auto& entry : schema()) {
        out += "# " + entry.description + "\n";
        out += entry.key + " = " + entry.get(defaults) + "\n";
    }
    return out;
}

}  // namespace pour
