// segens command-line front-end: synth -> evaluate -> report, plus remap and
// inspect utilities. All outputs are deterministic given the flags.

#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <segens/segens.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return segens::splitmix64(a ^ segens::splitmix64(b));
}

std::string scene_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene%04zu", i);
    return buf;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthFlags {
    std::uint64_t seed = 1;
    std::string out;
    std::uint32_t scenes = 8;
    std::uint32_t frames = 0;       // prior frames per image
    double ood_fraction = 0.0;      // fraction of scenes that get an OOD twin
    std::uint32_t mc = 1;           // ensemble members per frame
    double noise_sigma = 0.0;
    std::uint32_t jitter_px = 0;
    bool shuffle = false;
    std::int64_t vx = 1, vy = 0;    // sequence velocity (pixels/frame)
    float confusion = 3.0f;
    segens::SceneConfig cfg;
};

segens::SampleTensor make_prior_member(const segens::SampleTensor& prior_ideal,
                                       std::uint64_t seed,
                                       const segens::NoiseConfig& noise) {
    return segens::perturb_sample(prior_ideal, seed, noise);
}

int cmd_synth(const SynthFlags& f) {
    fs::path root(f.out);
    fs::create_directories(root / "samples");
    fs::create_directories(root / "gt");
    fs::create_directories(root / "flow");

    segens::NoiseConfig noise{f.noise_sigma, f.jitter_px, f.shuffle};
    std::vector<segens::ManifestRecord> records;
    std::size_t n_ood = static_cast<std::size_t>(f.ood_fraction * f.scenes + 0.5);

    for (std::size_t i = 0; i < f.scenes; ++i) {
        std::uint64_t scene_seed = mix_seed(f.seed, i);
        std::string id = scene_id(i);

        segens::Scene scene;
        std::vector<segens::SampleTensor> priors;
        std::vector<segens::FlowField> flows;
        if (f.frames > 0) {
            segens::Sequence seq =
                segens::gen_sequence(scene_seed, f.cfg, f.frames, f.vx, f.vy);
            scene = std::move(seq.current);
            priors = std::move(seq.priors);
            flows = std::move(seq.flows);
        } else {
            scene = segens::gen_scene(scene_seed, f.cfg);
        }

        segens::write_semantic(root / "gt" / (id + "_sem.bin"), scene.gt_semantic);
        segens::write_panoptic(root / "gt" / (id + "_pan.bin"), scene.gt_panoptic);
        std::vector<std::string> flow_paths;
        for (std::size_t k = 0; k < flows.size(); ++k) {
            std::string rel = "flow/" + id + "_k" + std::to_string(k + 1) + ".bin";
            segens::write_flow(root / rel, flows[k]);
            flow_paths.push_back(rel);
        }

        bool make_ood = i < n_ood;
        segens::Scene ood_scene;
        if (make_ood)
            ood_scene = segens::make_ood_variant(scene, mix_seed(scene_seed, 7), f.cfg);

        auto build_container = [&](const segens::Scene& s, const std::string& rel) {
            std::vector<segens::SampleTensor> samples;
            for (std::uint32_t j = 0; j < f.mc; ++j)
                samples.push_back(segens::make_member(s, mix_seed(scene_seed, 1000 + j),
                                                      noise, f.confusion));
            for (std::uint32_t k = 0; k < f.frames; ++k)
                for (std::uint32_t j = 0; j < f.mc; ++j)
                    samples.push_back(make_prior_member(
                        priors[k], mix_seed(scene_seed, 2000 + k * 64 + j), noise));
            segens::write_samples(root / rel, samples);
        };

        segens::ManifestRecord rec;
        rec.id = id;
        rec.samples = {"samples/" + id + ".bin"};
        rec.gt_semantic = "gt/" + id + "_sem.bin";
        rec.gt_panoptic = "gt/" + id + "_pan.bin";
        rec.flows = flow_paths;
        build_container(scene, rec.samples.front());

        if (make_ood) {
            segens::ManifestRecord ood = rec;
            ood.id = id + "_ood";
            ood.samples = {"samples/" + id + "_ood.bin"};
            ood.is_ood = true;
            ood.pair_id = rec.id;
            rec.pair_id = ood.id;
            build_container(ood_scene, ood.samples.front());
            records.push_back(rec);
            records.push_back(std::move(ood));
        } else {
            records.push_back(rec);
        }
    }

    segens::write_manifest(root / "manifest.jsonl", records);
    std::cout << "wrote " << records.size() << " records to " << (root / "manifest.jsonl")
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateFlags {
    std::string manifest;
    std::string domain = "both";
    std::string measures = "all";
    std::string pixel_agg = "image-mean";
    std::string task = "all";
    double score_thresh = 0.8;
    double overlap_thresh = 0.8;
    std::uint32_t bins = 15;
    std::string remap_file;
    std::string things;  // comma-separated class ids; empty = 2..c
    std::string tag;
    std::string out;
};

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_evaluate(const EvaluateFlags& f) {
    segens::DatasetIndex index = segens::read_manifest(f.manifest);

    segens::EvalOptions opt;
    opt.panoptic.score_thresh = f.score_thresh;
    opt.panoptic.overlap_thresh = f.overlap_thresh;
    opt.bins = f.bins;
    opt.domain_semantic = f.domain == "semantic" || f.domain == "both";
    opt.domain_panoptic = f.domain == "panoptic" || f.domain == "both";
    if (!segens::PixelAgg::parse(f.pixel_agg, opt.pixel_agg))
        throw CLI::ValidationError("--pixel-agg", "expected image-mean|image-sum|patch:<N>");

    if (f.measures != "all") {
        opt.measures.clear();
        for (const std::string& name : split_commas(f.measures)) {
            segens::Measure m;
            if (!segens::measure_from_name(name, m))
                throw CLI::ValidationError("--measures", "unknown measure: " + name);
            opt.measures.push_back(m);
        }
    }

    // Peek the first container for the class count; defaults the thing set
    // to every class above the background (id 1).
    if (index.records.empty()) throw segens::EmptyInput("manifest has no records");
    segens::SampleStreamReader probe(
        index.resolve(index.records.front().samples.at(0)));
    std::uint16_t classes = probe.header().classes;
    if (f.things.empty()) {
        for (std::uint16_t k = 2; k <= classes; ++k) opt.things.insert(k);
    } else {
        for (const std::string& t : split_commas(f.things))
            opt.things.insert(static_cast<std::uint16_t>(std::stoi(t)));
    }
    if (!f.remap_file.empty()) {
        opt.remap = segens::read_class_mapping(f.remap_file);
        std::uint16_t max_target = classes;
        for (const auto& [src, e] : opt.remap->by_source)
            max_target = std::max(max_target, e.target_id);
        opt.num_classes = max_target;
        // Post-remap thing classes follow the mapping annotation.
        opt.things.clear();
        for (const auto& [src, e] : opt.remap->by_source)
            if (e.target_has_instances) opt.things.insert(e.target_id);
    }

    segens::DatasetEval eval = segens::evaluate_dataset(index, opt);

    bool want_seg = f.task == "seg" || f.task == "all";
    bool want_calib = f.task == "calib" || f.task == "all";
    bool want_failure = f.task == "failure" || f.task == "all";
    bool want_ood = f.task == "ood" || f.task == "all";

    json tasks = json::object();
    json errors = json::object();
    if (want_seg) {
        json seg = json::object();
        if (opt.domain_semantic) {
            auto m = eval.dataset_miou();
            if (m) seg["miou"] = *m;
        }
        if (opt.domain_panoptic) {
            segens::PqResult r = eval.dataset_pq();
            seg["pq"] = r.pq;
            seg["sq"] = r.sq;
            seg["rq"] = r.rq;
        }
        tasks["seg"] = seg;
    }
    if (want_calib) {
        json calib = json::object();
        try {
            if (opt.domain_semantic) calib["ece_semantic"] = eval.ece_semantic.ece();
            if (opt.domain_panoptic) calib["ece_panoptic"] = eval.ece_panoptic.ece();
            tasks["calib"] = calib;
        } catch (const segens::Error& e) {
            errors["calib"] = e.what();
        }
    }
    if (want_failure) {
        json failure = json::object();
        try {
            for (segens::Measure m : opt.measures) {
                if (opt.domain_semantic)
                    failure["aurc_semantic"][segens::measure_name(m)] =
                        eval.aurc_for(m, /*panoptic=*/false);
                if (opt.domain_panoptic)
                    failure["aurc_panoptic"][segens::measure_name(m)] =
                        eval.aurc_for(m, /*panoptic=*/true);
            }
            tasks["failure"] = failure;
        } catch (const segens::Error& e) {
            errors["failure"] = e.what();
        }
    }
    if (want_ood) {
        json ood = json::object();
        try {
            for (segens::Measure m : opt.measures)
                ood["auroc"][segens::measure_name(m)] = eval.auroc_for(m);
            tasks["ood"] = ood;
        } catch (const segens::Error& e) {
            errors["ood"] = e.what();
        }
    }

    std::uint32_t samples_per_image =
        eval.images.empty() ? 0 : eval.images.front().samples;
    std::string tag =
        f.tag.empty() ? "q" + std::to_string(samples_per_image) : f.tag;

    json report;
    report["tag"] = tag;
    report["manifest"] = f.manifest;
    report["samples_per_image"] = samples_per_image;
    report["pixel_agg"] = opt.pixel_agg.name();
    report["bins"] = opt.bins;
    report["domain"] = f.domain;
    report["images"] = eval.images.size();
    report["ood_without_pair"] = eval.ood_without_pair;
    report["tasks"] = tasks;
    report["errors"] = errors;

    fs::path out_json = f.out + ".json";
    fs::path out_csv = f.out + ".csv";
    {
        std::ofstream o(out_json);
        if (!o) throw segens::MissingFile("cannot write " + out_json.string());
        o << report.dump(2) << "\n";
    }
    {
        segens::CsvWriter csv(out_csv);
        std::vector<std::string> header{"id",      "is_ood", "pair_id",
                                        "samples", "iou",    "pq",
                                        "fallback_pixels"};
        for (segens::Measure m : opt.measures) header.push_back(segens::measure_name(m));
        csv.row(header);
        for (const segens::ImageEval& e : eval.images) {
            std::vector<std::string> row{
                e.id,
                e.is_ood ? "1" : "0",
                e.pair_id,
                std::to_string(e.samples),
                e.iou ? segens::format_double(*e.iou) : "",
                e.pq ? segens::format_double(*e.pq) : "",
                std::to_string(e.fallback_pixels)};
            for (segens::Measure m : opt.measures)
                row.push_back(segens::format_double(e.aggregated.at(m)));
            csv.row(row);
        }
    }
    std::cout << "wrote " << out_json << " and " << out_csv << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report: baseline normalization over several evaluate outputs.
// Improvement sign conventions: lower-is-better metrics (AURC, ECE) use
// (base - x) / base; higher-is-better (AUROC, mIoU, PQ, SQ, RQ) use
// (x - base) / base. The baseline per (task, metric) is the best value among
// single-sample (q = 1) configurations.
// ---------------------------------------------------------------------------

bool metric_lower_is_better(const std::string& task) {
    return task == "calib" || task == "failure";
}

struct MetricRow {
    std::string task, metric, tag;
    std::uint32_t samples;
    double value;
};

void flatten_metrics(const std::string& task, const std::string& prefix, const json& node,
                     const std::string& tag, std::uint32_t samples,
                     std::vector<MetricRow>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        std::string name = prefix.empty() ? it.key() : prefix + "/" + it.key();
        if (it->is_object())
            flatten_metrics(task, name, *it, tag, samples, out);
        else if (it->is_number())
            out.push_back({task, name, tag, samples, it->get<double>()});
    }
}

void write_task_svg(const fs::path& path, const std::string& task,
                    const std::vector<std::tuple<std::string, double>>& bars) {
    std::ofstream o(path);
    if (!o) throw segens::MissingFile("cannot write " + path.string());
    int row_h = 22, label_w = 340, plot_w = 400, pad = 10;
    int h = pad * 2 + row_h * static_cast<int>(bars.size()) + 20;
    double max_abs = 1e-12;
    for (const auto& [name, v] : bars) max_abs = std::max(max_abs, std::abs(v));
    int zero_x = label_w + plot_w / 2;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << (label_w + plot_w + 2 * pad) << "\" height=\"" << h << "\">\n";
    o << "<text x=\"" << pad << "\" y=\"" << (pad + 10)
      << "\" font-family=\"monospace\" font-size=\"13\">relative improvement: " << task
      << "</text>\n";
    o << "<line x1=\"" << zero_x << "\" y1=\"" << (pad + 16) << "\" x2=\"" << zero_x
      << "\" y2=\"" << (h - pad) << "\" stroke=\"#888\"/>\n";
    int y = pad + 20;
    for (const auto& [name, v] : bars) {
        double frac = v / max_abs;
        int w = static_cast<int>(std::abs(frac) * (plot_w / 2 - 4));
        int x = frac >= 0 ? zero_x : zero_x - w;
        o << "<rect x=\"" << x << "\" y=\"" << (y + 4) << "\" width=\"" << std::max(w, 1)
          << "\" height=\"" << (row_h - 8) << "\" fill=\""
          << (frac >= 0 ? "#2a7" : "#c44") << "\"/>\n";
        o << "<text x=\"" << pad << "\" y=\"" << (y + row_h - 7)
          << "\" font-family=\"monospace\" font-size=\"11\">" << name << " "
          << segens::format_double(v) << "</text>\n";
        y += row_h;
    }
    o << "</svg>\n";
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& baseline_tag,
               const std::string& out_prefix) {
    if (inputs.empty()) throw segens::MissingBaseline("report needs at least one input");
    std::vector<MetricRow> rows;
    std::set<std::string> tasks_seen;
    for (const std::string& in : inputs) {
        std::ifstream ifs(in);
        if (!ifs) throw segens::MissingFile("cannot open " + in);
        json j;
        try {
            ifs >> j;
        } catch (const json::exception& e) {
            throw segens::ParseError(in + ": " + e.what());
        }
        std::string tag = j.at("tag").get<std::string>();
        std::uint32_t samples = j.at("samples_per_image").get<std::uint32_t>();
        for (auto it = j.at("tasks").begin(); it != j.at("tasks").end(); ++it) {
            tasks_seen.insert(it.key());
            flatten_metrics(it.key(), "", *it, tag, samples, rows);
        }
    }

    // Baseline per (task, metric): explicit tag if given, otherwise the best
    // single-sample configuration.
    std::map<std::pair<std::string, std::string>, MetricRow> baseline;
    for (const MetricRow& r : rows) {
        bool eligible = baseline_tag.empty() ? r.samples == 1 : r.tag == baseline_tag;
        if (!eligible) continue;
        auto key = std::make_pair(r.task, r.metric);
        auto it = baseline.find(key);
        bool lower = metric_lower_is_better(r.task);
        if (it == baseline.end() ||
            (lower ? r.value < it->second.value : r.value > it->second.value))
            baseline[key] = r;
    }
    if (baseline.empty())
        throw segens::MissingBaseline(
            baseline_tag.empty() ? "no single-sample (q=1) configuration in the inputs"
                                 : "no input tagged " + baseline_tag);

    segens::CsvWriter csv(fs::path(out_prefix + ".csv"));
    csv.row({"task", "metric", "tag", "samples", "value", "baseline_tag",
             "baseline_value", "improvement"});
    std::map<std::string, std::vector<std::tuple<std::string, double>>> per_task_bars;
    for (const MetricRow& r : rows) {
        auto it = baseline.find({r.task, r.metric});
        if (it == baseline.end())
            throw segens::MissingBaseline("no baseline for " + r.task + "/" + r.metric);
        const MetricRow& b = it->second;
        double improvement = metric_lower_is_better(r.task)
                                 ? (b.value - r.value) / b.value
                                 : (r.value - b.value) / b.value;
        csv.row({r.task, r.metric, r.tag, std::to_string(r.samples),
                 segens::format_double(r.value), b.tag, segens::format_double(b.value),
                 segens::format_double(improvement)});
        per_task_bars[r.task].push_back({r.tag + " " + r.metric, improvement});
    }
    for (const std::string& task : tasks_seen)
        write_task_svg(fs::path(out_prefix + "_" + task + ".svg"), task,
                       per_task_bars[task]);
    std::cout << "wrote " << out_prefix << ".csv and " << tasks_seen.size()
              << " SVG plot(s)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// remap / inspect
// ---------------------------------------------------------------------------

int cmd_remap(const std::string& in, const std::string& out, const std::string& mapping,
              const std::string& kind) {
    segens::ClassMapping m = segens::read_class_mapping(mapping);
    if (kind == "semantic") {
        segens::write_semantic(out, segens::remap_semantic(segens::read_semantic(in), m));
    } else if (kind == "panoptic") {
        segens::write_panoptic(out, segens::remap_panoptic(segens::read_panoptic(in), m));
    } else {
        throw CLI::ValidationError("--kind", "expected semantic|panoptic");
    }
    std::cout << "wrote " << out << "\n";
    return 0;
}

const char* transform_kind_name(segens::TransformKind k) {
    switch (k) {
        case segens::TransformKind::identity: return "identity";
        case segens::TransformKind::hflip: return "hflip";
        case segens::TransformKind::scale: return "scale";
        case segens::TransformKind::prior_frame: return "prior_frame";
    }
    return "?";
}

int cmd_inspect(const std::string& path) {
    segens::SampleStreamReader reader(path);
    const segens::ContainerHeader& h = reader.header();
    std::cout << path << "\n"
              << "  samples:       " << h.count << "\n"
              << "  queries:       " << h.queries << "\n"
              << "  classes:       " << h.classes << " (+1 no-object)\n"
              << "  height x width: " << h.height << " x " << h.width << "\n";
    std::size_t i = 0;
    while (auto s = reader.next()) {
        std::cout << "  [" << i++ << "] " << transform_kind_name(s->transform.kind);
        if (s->transform.kind == segens::TransformKind::scale)
            std::cout << " x" << s->transform.scale_factor;
        if (s->transform.kind == segens::TransformKind::prior_frame)
            std::cout << " k=" << static_cast<int>(s->transform.frame_offset);
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming ensemble aggregation and uncertainty evaluation for "
                 "query-based segmentation"};
    app.require_subcommand(1);

    SynthFlags sf;
    std::uint32_t classes = sf.cfg.classes;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--seed", sf.seed, "master seed");
    synth->add_option("--out", sf.out, "output directory")->required();
    synth->add_option("--scenes", sf.scenes, "number of scenes");
    synth->add_option("--frames", sf.frames, "prior frames per image");
    synth->add_option("--ood-fraction", sf.ood_fraction, "fraction of scenes with an OOD twin")
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--mc", sf.mc, "ensemble members per frame")->check(CLI::PositiveNumber);
    synth->add_option("--noise-sigma", sf.noise_sigma, "class logit noise sigma");
    synth->add_option("--jitter-px", sf.jitter_px, "max per-query mask translation");
    synth->add_flag("--shuffle", sf.shuffle, "shuffle query order per member");
    synth->add_option("--height", sf.cfg.height, "scene height");
    synth->add_option("--width", sf.cfg.width, "scene width");
    synth->add_option("--objects", sf.cfg.n_objects, "rectangles per scene");
    synth->add_option("--classes", classes, "dataset class count");
    synth->add_option("--queries", sf.cfg.queries, "query slots per sample");
    synth->add_option("--logit-magnitude", sf.cfg.logit_magnitude, "ideal-sample saturation");
    synth->add_option("--confusion", sf.confusion, "OOD-member class logit magnitude");
    synth->add_option("--vx", sf.vx, "sequence x velocity (px/frame)");
    synth->add_option("--vy", sf.vy, "sequence y velocity (px/frame)");

    EvaluateFlags ef;
    CLI::App* evaluate = app.add_subcommand("evaluate", "run the full pipeline over a manifest");
    evaluate->add_option("--manifest", ef.manifest, "manifest.jsonl path")->required();
    evaluate->add_option("--domain", ef.domain, "semantic|panoptic|both")
        ->check(CLI::IsMember({"semantic", "panoptic", "both"}));
    evaluate->add_option("--measures", ef.measures, "comma-separated measure names or 'all'");
    evaluate->add_option("--pixel-agg", ef.pixel_agg, "image-mean|image-sum|patch:<N>");
    evaluate->add_option("--task", ef.task, "failure|calib|ood|seg|all")
        ->check(CLI::IsMember({"failure", "calib", "ood", "seg", "all"}));
    evaluate->add_option("--score-thresh", ef.score_thresh, "panoptic query score threshold");
    evaluate->add_option("--overlap-thresh", ef.overlap_thresh, "panoptic overlap threshold");
    evaluate->add_option("--bins", ef.bins, "ECE bin count")->check(CLI::PositiveNumber);
    evaluate->add_option("--remap", ef.remap_file, "class mapping JSON applied to predictions");
    evaluate->add_option("--things", ef.things, "comma-separated thing class ids");
    evaluate->add_option("--tag", ef.tag, "configuration tag for reports");
    evaluate->add_option("--out", ef.out, "output prefix (.json/.csv appended)")->required();

    std::vector<std::string> report_in;
    std::string report_baseline, report_out;
    CLI::App* report = app.add_subcommand("report", "baseline-normalized comparison");
    report->add_option("--in", report_in, "evaluate JSON outputs")->required();
    report->add_option("--baseline", report_baseline,
                       "explicit baseline tag (default: best q=1 config)");
    report->add_option("--out", report_out, "output prefix")->required();

    std::string remap_in, remap_out, remap_mapping, remap_kind = "semantic";
    CLI::App* remap = app.add_subcommand("remap", "remap a label map file");
    remap->add_option("--in", remap_in, "input label map")->required();
    remap->add_option("--out", remap_out, "output label map")->required();
    remap->add_option("--mapping", remap_mapping, "class mapping JSON")->required();
    remap->add_option("--kind", remap_kind, "semantic|panoptic");

    std::string inspect_path;
    CLI::App* inspect = app.add_subcommand("inspect", "print a sample container summary");
    inspect->add_option("path", inspect_path, "container path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        sf.cfg.classes = static_cast<std::uint16_t>(classes);
        if (synth->parsed()) return cmd_synth(sf);
        if (evaluate->parsed()) return cmd_evaluate(ef);
        if (report->parsed()) return cmd_report(report_in, report_baseline, report_out);
        if (remap->parsed()) return cmd_remap(remap_in, remap_out, remap_mapping, remap_kind);
        if (inspect->parsed()) return cmd_inspect(inspect_path);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
