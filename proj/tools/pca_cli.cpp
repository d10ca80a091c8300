// Command-line front end: train, eval, explain, synth-data, param-count.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pca/backbone.hpp"
#include "pca/checkpoint.hpp"
#include "pca/cwa.hpp"
#include "pca/data.hpp"
#include "pca/explain.hpp"
#include "pca/loss.hpp"
#include "pca/metrics.hpp"
#include "pca/synth.hpp"
#include "pca/trainer.hpp"

namespace fs = std::filesystem;
using pca::Shape;
using pca::Tensor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- shared flag bundles ---

struct SpecFlags {
    std::string preset = "toy";
    std::string attention = "all";  // none | single | all
    int classes = 0;                // 0 = take from the data / preset default
    int k = 0;                      // 0 = preset default
    bool softmax_scores = false;
    bool residual = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--spec", preset, "backbone preset: toy or reference")
            ->check(CLI::IsMember({"toy", "reference"}))
            ->capture_default_str();
        cmd->add_option("--attention", attention, "attention sites: none, single (last block), or all")
            ->check(CLI::IsMember({"none", "single", "all"}))
            ->capture_default_str();
        cmd->add_option("--classes", classes, "number of classes (default: from data or preset)");
        cmd->add_option("--k", k, "attention channels per class (default: preset)");
        cmd->add_flag("--softmax-scores", softmax_scores, "normalize class scores with a softmax");
        cmd->add_flag("--residual-attention", residual, "add the gated features back onto the input");
    }

    pca::backbone::BackboneSpec build(int data_classes) const {
        pca::backbone::BackboneSpec s = preset == "reference" ? pca::backbone::BackboneSpec::reference()
                                                              : pca::backbone::BackboneSpec::toy();
        if (data_classes > 0) s.classes = data_classes;
        if (classes > 0) s.classes = classes;
        if (k > 0) s.k = k;
        if (attention == "none") s.attention_sites = {false, false, false};
        if (attention == "single") s.attention_sites = {false, false, true};
        if (attention == "all") s.attention_sites = {true, true, true};
        s.softmax_scores = softmax_scores;
        s.residual_attention = residual;
        s.validate();
        return s;
    }
};

std::string require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
    return path;
}

// forward a whole manifest in eval mode; returns labels, argmax predictions,
// and softmax scores for the AUC
struct InferenceResult {
    std::vector<int> labels, preds;
    Tensor<double> scores;
};

InferenceResult run_inference(pca::backbone::Model<float>& model, const pca::data::Manifest& m, int image_size,
                              int batch_size) {
    if (m.classes() != model.spec.classes)
        throw std::runtime_error("manifest has " + std::to_string(m.classes()) + " classes but checkpoint expects " +
                                 std::to_string(model.spec.classes));
    InferenceResult r;
    r.scores = Tensor<double>(Shape(static_cast<int>(m.records.size()), 1, 1, m.classes()));
    pca::data::LoadOptions opt;
    opt.target_h = opt.target_w = image_size;
    for (std::size_t start = 0; start < m.records.size(); start += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> entries;
        for (std::size_t i = start; i < std::min(m.records.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            entries.push_back(i);
        const pca::data::Batch batch = pca::data::load_batch(m, entries, opt);
        pca::Tape<float> tape;
        const auto out = pca::backbone::forward(tape, model, tape.leaf(batch.x, false), false);
        const Tensor<float> probs = pca::softmax_probs(out.logits->value);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const int n = static_cast<int>(i);
            int arg = 0;
            for (int c = 1; c < m.classes(); ++c)
                if (probs.at(n, 0, 0, c) > probs.at(n, 0, 0, arg)) arg = c;
            r.preds.push_back(arg);
            r.labels.push_back(batch.labels[i]);
            for (int c = 0; c < m.classes(); ++c)
                r.scores.at(static_cast<int>(entries[i]), 0, 0, c) = static_cast<double>(probs.at(n, 0, 0, c));
        }
    }
    return r;
}

pca::metrics::MetricsReport report_for(pca::backbone::Model<float>& model, const pca::data::Manifest& m,
                                       int image_size, int batch_size) {
    const InferenceResult inf = run_inference(model, m, image_size, batch_size);
    const auto cm = pca::metrics::ConfusionMatrix::from_predictions(inf.labels, inf.preds, m.classes());
    return pca::metrics::evaluate(cm, inf.scores, inf.labels);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

// --- train ---

struct TrainArgs {
    std::string data;
    std::string manifest;
    std::string image_root;
    std::string out = "run";
    SpecFlags spec;
    pca::train::TrainConfig cfg;
    bool paper_protocol = false;
    bool no_augment = false;
    std::array<double, 3> ratios{0.6, 0.2, 0.2};
};

int cmd_train(const TrainArgs& a) {
    std::string manifest_path = a.manifest;
    std::string root = a.image_root;
    if (manifest_path.empty()) {
        if (a.data.empty()) throw UsageError("train needs --data or --manifest");
        manifest_path = a.data + "/manifest.csv";
        if (root.empty()) root = a.data;
    } else if (root.empty()) {
        root = fs::path(manifest_path).parent_path().string();
    }
    require_file(manifest_path, "manifest");

    const pca::data::Manifest full = pca::data::load_manifest(manifest_path, root);
    pca::train::TrainConfig cfg = a.cfg;
    cfg.augment = !a.no_augment;
    cfg.validate();

    // default: split first so duplicates never leak across splits;
    // --paper-protocol balances the whole set before dividing it
    std::array<pca::data::Manifest, 3> splits;
    if (a.paper_protocol) {
        splits = pca::data::stratified_split(pca::data::upsample_minority(full), a.ratios, cfg.seed);
    } else {
        splits = pca::data::stratified_split(full, a.ratios, cfg.seed);
        splits[0] = pca::data::upsample_minority(splits[0]);
    }
    const std::string protocol = a.paper_protocol ? "upsample-then-split" : "split-then-upsample";

    const auto spec = a.spec.build(full.classes());
    auto model = pca::backbone::build_model<float>(spec, cfg.seed);
    std::cout << "training " << a.spec.preset << " spec (" << model.param_count() << " params, attention "
              << a.spec.attention << ") on " << splits[0].records.size() << "/" << splits[1].records.size() << "/"
              << splits[2].records.size() << " samples, protocol " << protocol << "\n";

    cfg.verbose = true;
    auto result = pca::train::fit(model, splits[0], splits[1], cfg);
    if (result.aborted) std::cerr << "warning: non-finite loss, stopped early; best checkpoint kept\n";

    fs::create_directories(a.out);
    pca::ckpt::save_checkpoint(result.model, a.out + "/checkpoint");
    for (int s = 0; s < 3; ++s)
        pca::data::save_manifest(splits[static_cast<std::size_t>(s)],
                                 a.out + "/" + std::array<const char*, 3>{"train", "val", "test"}[static_cast<std::size_t>(s)] + ".csv");
    write_text_file(a.out + "/train_log.csv", "# protocol=" + protocol + "\n" + result.log.to_csv());
    nlohmann::json log_json;
    log_json["protocol"] = protocol;
    log_json["best_epoch"] = result.best_epoch;
    log_json["best_val_loss"] = result.best_val_loss;
    log_json["epochs"] = result.log.to_json();
    write_text_file(a.out + "/train_log.json", log_json.dump(2) + "\n");

    const auto report = report_for(result.model, splits[2], cfg.image_size, cfg.batch_size);
    std::cout << "test split metrics\n" << report.to_table();
    write_text_file(a.out + "/metrics.json", report.to_json());
    std::cout << "wrote " << a.out << "/checkpoint, train_log.csv, metrics.json\n";
    return kExitOk;
}

// --- eval ---

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string image_root;
    std::string out;
    int image_size = 32;
    int batch_size = 32;
};

int cmd_eval(const EvalArgs& a) {
    require_file(a.checkpoint + "/manifest.json", "checkpoint");
    require_file(a.manifest, "manifest");
    const std::string root = a.image_root.empty() ? fs::path(a.manifest).parent_path().string() : a.image_root;
    auto model = pca::ckpt::load_checkpoint<float>(a.checkpoint);
    const pca::data::Manifest m = pca::data::load_manifest(a.manifest, root);
    const auto report = report_for(model, m, a.image_size, a.batch_size);
    std::cout << report.to_table();
    if (!a.out.empty()) write_text_file(a.out, report.to_json());
    return kExitOk;
}

// --- explain ---

struct ExplainArgs {
    std::string checkpoint;
    std::vector<std::string> images;
    std::string out = ".";
    std::string layer;
    std::string format = "png";
    int target_class = -1;
    int image_size = 32;
};

int cmd_explain(const ExplainArgs& a) {
    require_file(a.checkpoint + "/manifest.json", "checkpoint");
    auto model = pca::ckpt::load_checkpoint<float>(a.checkpoint);
    fs::create_directories(a.out);
    if (a.target_class >= model.spec.classes)
        throw UsageError("--class " + std::to_string(a.target_class) + " out of range for " +
                         std::to_string(model.spec.classes) + " classes");
    const std::string layer = a.layer.empty() ? pca::explain::default_cam_layer(model.spec) : a.layer;

    for (const auto& path : a.images) {
        const Tensor<float> pixels = pca::aug::resize_bilinear(
            pca::image::to_float(pca::image::read_image(path)), a.image_size, a.image_size);
        int target = a.target_class;
        if (target < 0) {
            pca::Tape<float> tape;
            const auto out = pca::backbone::forward(tape, model, tape.leaf(pixels, false), false);
            target = 0;
            for (int c = 1; c < model.spec.classes; ++c)
                if (out.logits->value.at(0, 0, 0, c) > out.logits->value.at(0, 0, 0, target)) target = c;
        }
        const auto map = pca::explain::grad_cam(model, pixels, target, layer);
        const std::string name = pca::explain::overlay_filename(fs::path(path).stem().string(),
                                                                "class" + std::to_string(target), layer, a.format);
        pca::explain::export_overlay(map, pixels, a.out + "/" + name);
        std::cout << path << " -> " << a.out << "/" << name << " (class " << target << ")\n";
    }
    return kExitOk;
}

// --- synth-data ---

struct SynthArgs {
    std::string out;
    int classes = 4;
    std::string counts = "600,120,60,30";
    int size = 32;
    std::uint64_t seed = 0;
    std::string format = "ppm";
};

int cmd_synth_data(const SynthArgs& a) {
    std::vector<int> counts;
    std::stringstream ss(a.counts);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            counts.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw UsageError("bad count '" + item + "' in --counts");
        }
    }
    pca::data::Manifest m;
    try {
        m = pca::synth::synth_dataset(a.out, a.classes, counts, a.size, a.seed, a.format);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    std::cout << "wrote " << m.records.size() << " images to " << a.out << "/images, manifest " << a.out
              << "/manifest.csv\n";
    for (int c = 0; c < m.classes(); ++c)
        std::cout << "  " << m.class_names[static_cast<std::size_t>(c)] << " " << m.counts()[static_cast<std::size_t>(c)] << "\n";
    return kExitOk;
}

// --- param-count ---

struct ParamCountArgs {
    SpecFlags spec;
};

int cmd_param_count(const ParamCountArgs& a) {
    const auto spec = a.spec.build(0);
    auto model = pca::backbone::build_model<float>(spec, 0);
    std::printf("%-12s %12s\n", "module", "params");
    for (const auto& [module, count] : model.param_breakdown()) std::printf("%-12s %12zu\n", module.c_str(), count);
    std::printf("%-12s %12zu\n", "total", model.param_count());

    bool any_site = false;
    for (int b = 0; b < 3; ++b) any_site = any_site || spec.attention_sites[static_cast<std::size_t>(b)];
    if (any_site) {
        std::printf("\nattention overhead per site (9C + C*k*L + 3*k*L):\n");
        for (int b = 0; b < 3; ++b) {
            if (!spec.attention_sites[static_cast<std::size_t>(b)]) continue;
            const int c = spec.channels_out_of_block(b + 1);
            std::printf("  cwa%d (C=%d) %10zu\n", b + 2, c,
                        pca::cwa::cwa_param_count(c, spec.classes, spec.k));
        }
    }
    if (model.param_count() != pca::backbone::backbone_param_count(spec)) {
        std::cerr << "internal error: closed-form count disagrees with the model\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-wise attention image classifier"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "split a dataset, fit the model, write checkpoint + logs + metrics");
    t->set_config("--config", "", "flat key=value file; command-line flags override it");
    t->add_option("--data", train.data, "dataset directory containing manifest.csv");
    t->add_option("--manifest", train.manifest, "manifest CSV (overrides --data)");
    t->add_option("--image-root", train.image_root, "base directory for image paths");
    t->add_option("--out", train.out, "output directory")->capture_default_str();
    t->add_option("--epochs", train.cfg.epochs, "training epochs")->capture_default_str();
    t->add_option("--batch-size", train.cfg.batch_size, "SGD minibatch size")->capture_default_str();
    t->add_option("--lr", train.cfg.lr, "initial learning rate")->capture_default_str();
    t->add_option("--gamma", train.cfg.gamma, "focal loss focusing strength")->capture_default_str();
    t->add_option("--image-size", train.cfg.image_size, "square resize applied to every image")->capture_default_str();
    t->add_option("--plateau-patience", train.cfg.plateau_patience, "stagnant epochs before an lr cut")
        ->capture_default_str();
    t->add_option("--early-stop-patience", train.cfg.early_stop_patience,
                  "stagnant epochs before stopping; larger than --epochs disables")
        ->capture_default_str();
    t->add_option("--seed", train.cfg.seed, "seed for split, init, shuffling, augmentation")->capture_default_str();
    t->add_flag("--paper-protocol", train.paper_protocol,
                "upsample before splitting (duplicates may reach val/test)");
    t->add_flag("--no-augment", train.no_augment, "disable training-time augmentation");
    train.spec.attach(t);

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "score a checkpoint against a manifest");
    e->add_option("--checkpoint", eval.checkpoint, "checkpoint directory")->required();
    e->add_option("--manifest", eval.manifest, "manifest CSV")->required();
    e->add_option("--image-root", eval.image_root, "base directory for image paths");
    e->add_option("--out", eval.out, "write the JSON report here");
    e->add_option("--image-size", eval.image_size, "square resize applied to every image")->capture_default_str();
    e->add_option("--batch-size", eval.batch_size, "inference batch size")->capture_default_str();

    ExplainArgs explain;
    auto* x = app.add_subcommand("explain", "write saliency overlays for images");
    x->add_option("--checkpoint", explain.checkpoint, "checkpoint directory")->required();
    x->add_option("images", explain.images, "image files")->required();
    x->add_option("--out", explain.out, "output directory")->capture_default_str();
    x->add_option("--class", explain.target_class, "explain this class instead of the prediction");
    x->add_option("--layer", explain.layer, "activation site (default: last gated block)");
    x->add_option("--format", explain.format, "overlay image format")->check(CLI::IsMember({"png", "ppm"}))->capture_default_str();
    x->add_option("--image-size", explain.image_size, "square resize applied to the image")->capture_default_str();

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-data", "generate the synthetic shape dataset");
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--classes", synth.classes, "number of classes")->capture_default_str();
    s->add_option("--counts", synth.counts, "comma-separated per-class counts")->capture_default_str();
    s->add_option("--size", synth.size, "square image size")->capture_default_str();
    s->add_option("--seed", synth.seed, "generator seed; also part of every pixel")->capture_default_str();
    s->add_option("--format", synth.format, "image file format")->check(CLI::IsMember({"ppm", "png"}))->capture_default_str();

    ParamCountArgs pc;
    auto* p = app.add_subcommand("param-count", "print the per-module learnable parameter table");
    pc.spec.attach(p);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& help) {
        return app.exit(help);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitUsage;
    }

    try {
        if (t->parsed()) return cmd_train(train);
        if (e->parsed()) return cmd_eval(eval);
        if (x->parsed()) return cmd_explain(explain);
        if (s->parsed()) return cmd_synth_data(synth);
        if (p->parsed()) return cmd_param_count(pc);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
