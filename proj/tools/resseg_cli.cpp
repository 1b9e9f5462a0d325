// resseg: rasterize annotations, generate synthetic data, split, train,
// evaluate and dump per-level prob-maps.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "resseg/checkpoint.hpp"
#include "resseg/data.hpp"
#include "resseg/geometry.hpp"
#include "resseg/image_io.hpp"
#include "resseg/train.hpp"

namespace fs = std::filesystem;
using namespace resseg;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

// Failure to write an output.
class OutputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    if (!out) throw OutputError("cannot write " + path);
}

void make_dirs(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw OutputError("cannot create directory " + dir + ": " + ec.message());
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        try {
            out.push_back(std::stod(item, &used));
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != item.size()) throw ConfigError("expected a comma-separated list of numbers, got '" + text + "'");
    }
    return out;
}

// ---- config file expansion ----

// A --config file is a JSON object whose keys are flag names (underscores and
// dashes are interchangeable). A nested "network" object is flattened. The
// resulting flags go before the command-line ones, so the command line wins.
std::vector<std::string> config_flags(const std::string& path) {
    const nlohmann::json doc = read_json(path);
    if (!doc.is_object()) throw ConfigError(path + ": config must be a JSON object");
    std::vector<std::string> out;
    auto emit = [&](std::string key, const nlohmann::json& v) {
        std::replace(key.begin(), key.end(), '_', '-');
        if (key == "config") throw ConfigError(path + ": config files cannot include other configs");
        std::string value;
        if (v.is_string()) {
            value = v.get<std::string>();
        } else if (v.is_number() || v.is_boolean()) {
            value = v.dump();
        } else if (v.is_array()) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (!v[i].is_number()) throw ConfigError(path + ": " + key + " must hold numbers");
                value += (i ? "," : "") + v[i].dump();
            }
        } else {
            throw ConfigError(path + ": unsupported value for " + key);
        }
        out.push_back("--" + key);
        out.push_back(value);
    };
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.key() == "network" && it.value().is_object()) {
            for (auto n = it.value().begin(); n != it.value().end(); ++n) emit(n.key(), n.value());
        } else {
            emit(it.key(), it.value());
        }
    }
    return out;
}

// ---- subcommands ----

struct RasterizeArgs {
    std::string annotations, out;
    int width = 0, height = 0;
};

int run_rasterize(const RasterizeArgs& a) {
    if (a.width < 1 || a.height < 1) throw ConfigError("width and height must be >= 1");
    const BinaryMask m = rasterize_polygons(load_annotation(a.annotations), a.width, a.height);
    save_mask(a.out, m);
    std::cout << "wrote " << a.out << " (" << m.count() << " foreground pixels)\n";
    return kOk;
}

struct SynthArgs {
    std::string out_dir;
    SynthConfig cfg;
};

int run_synth(const SynthArgs& a) {
    const auto subs = generate_synthetic(a.cfg);
    make_dirs(a.out_dir + "/images");
    make_dirs(a.out_dir + "/masks");
    nlohmann::json items = nlohmann::json::array();
    for (const auto& s : subs) {
        const std::string img = "images/" + s.id + ".png", mask = "masks/" + s.id + ".png";
        save_rgb(a.out_dir + "/" + img, s.image);
        save_mask(a.out_dir + "/" + mask, s.mask);
        items.push_back({{"id", s.id}, {"image_path", img}, {"mask_path", mask}});
    }
    write_json(a.out_dir + "/manifest.json", {{"items", items}});
    std::cout << "wrote " << subs.size() << " images and " << a.out_dir << "/manifest.json\n";
    return kOk;
}

struct SplitArgs {
    std::string manifest, ratios = "8:1:1", out;
    std::uint64_t seed = 0;
};

int run_split(const SplitArgs& a) {
    std::vector<std::string> ids;
    for (const auto& item : load_manifest(a.manifest)) ids.push_back(item.id);
    const SplitRatios r = parse_ratios(a.ratios);
    const DatasetSplit s = split_dataset(ids, r, a.seed);
    nlohmann::json j = to_json(s);
    j["seed"] = a.seed;
    j["ratios"] = {r.train, r.validation, r.test};
    write_json(a.out, j);
    std::cout << "train " << s.train.size() << ", validation " << s.validation.size() << ", test " << s.test.size()
              << "\n";
    return kOk;
}

DatasetSplit load_or_make_split(const std::string& split_path, const std::vector<SubImage>& all, std::uint64_t seed) {
    if (!split_path.empty()) return split_from_json(read_json(split_path));
    std::vector<std::string> ids;
    for (const auto& s : all) ids.push_back(s.id);
    return split_dataset(ids, {}, seed);
}

struct TrainArgs {
    std::string manifest, split, out_dir, model = "ResSegFixed", weights;
    TrainConfig cfg;
};

int run_train(TrainArgs a) {
    a.cfg.model = parse_model_kind(a.model);
    if (!a.weights.empty()) a.cfg.weights.per_level = parse_list(a.weights);
    validate(a.cfg);
    const auto all = load_dataset(a.manifest);
    const DatasetSplit split = load_or_make_split(a.split, all, a.cfg.seed);
    const auto train_set = select(all, split.train);
    const auto val_set = select(all, split.validation);

    make_dirs(a.out_dir);
    write_json(a.out_dir + "/config.json", to_json(a.cfg));
    const TrainResult r = train(a.cfg, train_set, val_set, [&](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << "/" << a.cfg.epochs << "  loss " << e.train_loss << "  val_dsc "
                  << e.val_mean_dsc << "\n";
    });
    write_json(a.out_dir + "/history.json", to_json(r.history));
    try {
        save_checkpoint(a.out_dir + "/model.ckpt", r.best,
                        {{"best_epoch", r.history.best_epoch}, {"train_config", to_json(a.cfg)}});
    } catch (const CheckpointError& e) {
        throw OutputError(e.what());
    }
    std::cout << "best epoch " << r.history.best_epoch << ", val_dsc "
              << r.history.per_epoch[static_cast<std::size_t>(r.history.best_epoch - 1)].val_mean_dsc << "\n";
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, manifest, split, subset, out;
    double threshold = 0.5;
};

int run_eval(const EvalArgs& a) {
    const auto net = load_checkpoint<float>(a.checkpoint);
    const auto all = load_dataset(a.manifest);
    std::vector<SubImage> subs;
    const std::string subset = a.subset.empty() ? (a.split.empty() ? "all" : "test") : a.subset;
    if (subset == "all") {
        subs = all;
    } else {
        if (a.split.empty()) throw ConfigError("--subset " + subset + " needs --split");
        const DatasetSplit s = split_from_json(read_json(a.split));
        if (subset == "train") {
            subs = select(all, s.train);
        } else if (subset == "validation") {
            subs = select(all, s.validation);
        } else if (subset == "test") {
            subs = select(all, s.test);
        } else {
            throw UsageError("--subset must be train, validation, test or all");
        }
    }
    const EvalReport rep = evaluate(net, subs, a.threshold);
    write_json(a.out, to_json(rep));
    std::cout << "mean_dsc " << rep.mean_dsc << " over " << rep.per_image.size() << " images\n";
    return kOk;
}

struct DumpArgs {
    std::string checkpoint, image, out_dir;
};

int run_dump_levels(const DumpArgs& a) {
    // Any file failure here counts as I/O, reads included.
    SegmentationNet<float> net(ModelKind::UNetBaseline, desk_profile());
    Tensor<float> img;
    try {
        net = load_checkpoint<float>(a.checkpoint);
        img = load_rgb(a.image);
    } catch (const CheckpointError& e) {
        throw OutputError(e.what());
    } catch (const ImageIOError& e) {
        throw OutputError(e.what());
    }
    // Zero-pad to a size the network accepts, then crop every level back.
    const int div = 1 << (net.config().levels - 1);
    const int ph = (img.h() + div - 1) / div * div, pw = (img.w() + div - 1) / div * div;
    Tensor<float> padded(1, img.c(), ph, pw);
    for (int c = 0; c < img.c(); ++c)
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x) padded(0, c, y, x) = img(0, c, y, x);
    const auto out = net.forward(padded);

    make_dirs(a.out_dir);
    std::vector<Image8> levels;
    for (std::size_t k = 0; k < out.size(); ++k) {
        const Tensor<float>& t = out.levels[k];
        const int f = ph / t.h();
        const int h = (img.h() + f - 1) / f, w = (img.w() + f - 1) / f;
        ProbMap<float> p(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) p.at(y, x) = t(0, 0, y, x);
        levels.push_back(prob_to_gray(p));
        write_png(a.out_dir + "/level_" + std::to_string(k) + ".png", levels.back());
    }
    // Panel: every level blown up to full size with pixel replication, left to
    // right coarsest first, separated by white gutters.
    const int gutter = 4;
    const int n = static_cast<int>(levels.size());
    Image8 panel{n * img.w() + (n - 1) * gutter, img.h(), 1, {}};
    panel.pixels.assign(static_cast<std::size_t>(panel.width) * panel.height, 255);
    for (int k = 0; k < n; ++k) {
        const Image8& l = levels[static_cast<std::size_t>(k)];
        const int f = ph / out.levels[static_cast<std::size_t>(k)].h();
        const int x0 = k * (img.w() + gutter);
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x)
                panel.pixels[static_cast<std::size_t>(y) * panel.width + x0 + x] =
                    l.pixels[static_cast<std::size_t>(y / f) * l.width + x / f];
    }
    write_png(a.out_dir + "/panel.png", panel);
    std::cout << "wrote " << n << " levels and panel.png to " << a.out_dir << "\n";
    return kOk;
}

const char* kConfigHelp =
    "\nAny flag can also come from --config FILE, a JSON object keyed by flag name\n"
    "(\"batch_size\" and \"batch-size\" are the same). Command-line flags override the file.\n";

const char* kTrainHelp =
    "\nManifest: {\"items\": [{\"id\", \"image_path\", \"annotation_path\" | \"mask_path\"}]}, paths\n"
    "relative to the manifest. Annotation: {\"polygons\": [[[x, y], ...], ...]}.\n"
    "Split file: {\"train\": [ids], \"validation\": [ids], \"test\": [ids]}. Without --split the\n"
    "manifest is split 8:1:1 with --seed.\n"
    "Config file: the keys model, epochs, batch_size, learning_rate, seed, patches_per_image,\n"
    "weights, eval_threshold, horz_stages and network {levels, base_channels, input_channels,\n"
    "conv_kernel, input_size}, plus manifest, split and out_dir.\n"
    "Writes OUT_DIR/config.json, OUT_DIR/history.json ({\"per_epoch\": [{\"epoch\", \"train_loss\",\n"
    "\"val_mean_dsc\"}], \"best_epoch\"}) and OUT_DIR/model.ckpt (best validation epoch).\n";

const char* kEvalHelp =
    "\nReport: {\"per_image\": [{\"id\", \"dsc\"}], \"mean_dsc\", \"threshold\"}. Images are tiled\n"
    "into input_size squares over a zero-padded canvas.\n";

int run(int argc, char** argv) {
    CLI::App app{"Residual prob-map refinement segmentation tools", "resseg"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config_path;

    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "JSON file supplying flags"); };

    RasterizeArgs ra;
    auto* rasterize = app.add_subcommand("rasterize", "Rasterize polygon annotations into a mask PNG");
    rasterize->add_option("--annotations", ra.annotations, "Annotation JSON")->required();
    rasterize->add_option("--width", ra.width, "Mask width")->required();
    rasterize->add_option("--height", ra.height, "Mask height")->required();
    rasterize->add_option("--out", ra.out, "Output PNG (0 background, 255 foreground)")->required();
    add_config(rasterize);
    rasterize->footer(std::string("\nAnnotation: {\"polygons\": [[[x, y], ...], ...]}, pixel coordinates.\n") +
                      kConfigHelp);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic ellipse dataset");
    synth->add_option("--out-dir", sa.out_dir, "Output directory")->required();
    synth->add_option("--count", sa.cfg.count, "Number of images")->capture_default_str();
    synth->add_option("--size", sa.cfg.image_size, "Image side length")->capture_default_str();
    synth->add_option("--ellipses-min", sa.cfg.ellipses_min)->capture_default_str();
    synth->add_option("--ellipses-max", sa.cfg.ellipses_max)->capture_default_str();
    synth->add_option("--radius-min", sa.cfg.radius_min)->capture_default_str();
    synth->add_option("--radius-max", sa.cfg.radius_max)->capture_default_str();
    synth->add_option("--noise", sa.cfg.noise_stddev, "Pixel noise standard deviation")->capture_default_str();
    synth->add_option("--seed", sa.cfg.seed)->capture_default_str();
    add_config(synth);
    synth->footer(std::string("\nWrites OUT_DIR/images/*.png, OUT_DIR/masks/*.png and OUT_DIR/manifest.json.\n") +
                  kConfigHelp);

    SplitArgs spa;
    auto* split = app.add_subcommand("split", "Split a manifest into train/validation/test ids");
    split->add_option("--manifest", spa.manifest, "Dataset manifest")->required();
    split->add_option("--ratios", spa.ratios, "train:validation:test")->capture_default_str();
    split->add_option("--seed", spa.seed)->capture_default_str();
    split->add_option("--out", spa.out, "Output split JSON")->required();
    add_config(split);
    split->footer(std::string("\nSplit file: {\"train\": [ids], \"validation\": [ids], \"test\": [ids], \"seed\", "
                              "\"ratios\"}.\nValidation and test get floor(n * ratio / total); train gets the rest.\n") +
                  kConfigHelp);

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
    tr->add_option("--split", ta.split, "Split JSON");
    tr->add_option("--out-dir", ta.out_dir, "Output directory")->required();
    tr->add_option("--model", ta.model, "ResSegFixed, ResSegNonFixed, ResSegHorz or UNetBaseline")->capture_default_str();
    tr->add_option("--epochs", ta.cfg.epochs)->capture_default_str();
    tr->add_option("--batch-size", ta.cfg.batch_size)->capture_default_str();
    tr->add_option("--learning-rate", ta.cfg.learning_rate, "Adam step size")->capture_default_str();
    tr->add_option("--seed", ta.cfg.seed)->capture_default_str();
    tr->add_option("--patches-per-image", ta.cfg.patches_per_image)->capture_default_str();
    tr->add_option("--weights", ta.weights, "Per-level loss weights, coarsest first (default 1/4 ..., 1)");
    tr->add_option("--eval-threshold", ta.cfg.eval_threshold)->capture_default_str();
    tr->add_option("--horz-stages", ta.cfg.horz_stages)->capture_default_str();
    tr->add_option("--levels", ta.cfg.network.levels)->capture_default_str();
    tr->add_option("--base-channels", ta.cfg.network.base_channels)->capture_default_str();
    tr->add_option("--input-channels", ta.cfg.network.input_channels)->capture_default_str();
    tr->add_option("--conv-kernel", ta.cfg.network.conv_kernel)->capture_default_str();
    tr->add_option("--input-size", ta.cfg.network.input_size, "Training patch size")->capture_default_str();
    add_config(tr);
    tr->footer(std::string(kTrainHelp) + kConfigHelp);

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--checkpoint", ea.checkpoint)->required();
    ev->add_option("--manifest", ea.manifest, "Dataset manifest")->required();
    ev->add_option("--split", ea.split, "Split JSON");
    ev->add_option("--subset", ea.subset, "train, validation, test or all (default: test with --split, else all)");
    ev->add_option("--threshold", ea.threshold)->capture_default_str();
    ev->add_option("--out", ea.out, "Report JSON")->required();
    add_config(ev);
    ev->footer(std::string(kEvalHelp) + kConfigHelp);

    DumpArgs da;
    auto* dump = app.add_subcommand("dump-levels", "Write every supervised prob-map of one image as PNGs");
    dump->add_option("--checkpoint", da.checkpoint)->required();
    dump->add_option("--image", da.image, "RGB PNG")->required();
    dump->add_option("--out-dir", da.out_dir)->required();
    add_config(dump);
    dump->footer(std::string("\nWrites OUT_DIR/level_0.png (coarsest) ... level_k.png (final), prob x 255 rounded,\n"
                             "and OUT_DIR/panel.png with all levels side by side at full size.\n") +
                 kConfigHelp);

    // Splice config-file flags in front of the command-line ones.
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 1; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") {
            auto* sub = app.get_subcommand_no_throw(args[0]);
            if (!sub) break;
            const auto extra = config_flags(args[i + 1]);
            for (std::size_t k = 0; k < extra.size(); k += 2) {
                if (!sub->get_option_no_throw(extra[k])) {
                    throw ConfigError(args[i + 1] + ": unknown key " + extra[k].substr(2) + " for " + args[0]);
                }
            }
            args.insert(args.begin() + 1, extra.begin(), extra.end());
            break;
        }
    }
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (rasterize->parsed()) return run_rasterize(ra);
    if (synth->parsed()) return run_synth(sa);
    if (split->parsed()) return run_split(spa);
    if (tr->parsed()) return run_train(ta);
    if (ev->parsed()) return run_eval(ea);
    return run_dump_levels(da);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const OutputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const ImageWriteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const InvalidAnnotation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const ImageIOError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const LossError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}
