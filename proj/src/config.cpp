#include "monetlab/config.hpp"

#include <set>

#include "json.hpp"
#include "monetlab/common.hpp"
#include "monetlab/store.hpp"

namespace monetlab::config {

using nlohmann::json;

static void require_known_keys(const json& j, const std::set<std::string>& known,
                               const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key()))
            throw data_error("config: unknown key '" + it.key() + "' in " + where);
    }
}

static synth::DatasetConfig parse_dataset(const json& j, const synth::DatasetConfig& base,
                                          const std::string& where) {
    require_known_keys(j,
                       {"root", "n_train", "n_test", "classes", "height", "width", "seed",
                        "domain", "timelapse_sequences", "timelapse_frames"},
                       where);
    synth::DatasetConfig c = base;
    c.root = j.value("root", c.root);
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.classes = j.value("classes", c.classes);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.seed = j.value("seed", c.seed);
    if (j.contains("domain")) c.domain = synth::parse_domain(j.at("domain").get<std::string>());
    c.timelapse_sequences = j.value("timelapse_sequences", c.timelapse_sequences);
    c.timelapse_frames = j.value("timelapse_frames", c.timelapse_frames);
    return c;
}

static json dataset_to_json(const synth::DatasetConfig& c) {
    return json{{"root", c.root},
                {"n_train", c.n_train},
                {"n_test", c.n_test},
                {"classes", c.classes},
                {"height", c.height},
                {"width", c.width},
                {"seed", c.seed},
                {"domain", synth::domain_name(c.domain)},
                {"timelapse_sequences", c.timelapse_sequences},
                {"timelapse_frames", c.timelapse_frames}};
}

RunConfig default_config() {
    RunConfig c;
    c.dataset.root = "data/base";
    c.dataset.domain = synth::Domain::base;

    synth::DatasetConfig sh;
    sh.root = "data/shifted";
    sh.domain = synth::Domain::shifted;
    sh.n_train = 600;
    sh.n_test = 150;
    sh.seed = 2;
    sh.timelapse_sequences = 0;
    sh.timelapse_frames = 0;
    c.shifted_dataset = sh;

    c.train.dataset_root = c.dataset.root;
    c.train.checkpoint_dir = "runs/S";
    c.adapt.eval = c.eval;
    return c;
}

RunConfig parse_config(const std::string& text) {
    json j = json::parse(text);
    require_known_keys(j,
                       {"dataset", "shifted_dataset", "train", "eval", "adapt", "timelapse",
                        "threads", "out"},
                       "top level");
    RunConfig c = default_config();
    if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"), c.dataset, "dataset");
    if (j.contains("shifted_dataset"))
        c.shifted_dataset =
            parse_dataset(j.at("shifted_dataset"), *c.shifted_dataset, "shifted_dataset");
    if (j.contains("train")) {
        const json& t = j.at("train");
        require_known_keys(t,
                           {"tier", "lr", "batch", "steps", "seed", "dataset_root",
                            "checkpoint_dir", "checkpoint_every", "val_every", "val_examples",
                            "dump_every", "sample_steps", "image_size"},
                           "train");
        diffusion::TrainingConfig& tc = c.train;
        if (t.contains("tier")) {
            const std::string tier = t.at("tier").get<std::string>();
            if (tier.size() != 1) throw data_error("config: train.tier must be one letter");
            tc.tier = tier[0];
        }
        tc.lr = t.value("lr", tc.lr);
        tc.batch = t.value("batch", tc.batch);
        tc.steps = t.value("steps", tc.steps);
        tc.seed = t.value("seed", tc.seed);
        tc.dataset_root = t.value("dataset_root", tc.dataset_root);
        tc.checkpoint_dir = t.value("checkpoint_dir", tc.checkpoint_dir);
        tc.checkpoint_every = t.value("checkpoint_every", tc.checkpoint_every);
        tc.val_every = t.value("val_every", tc.val_every);
        tc.val_examples = t.value("val_examples", tc.val_examples);
        tc.dump_every = t.value("dump_every", tc.dump_every);
        tc.sample_steps = t.value("sample_steps", tc.sample_steps);
        tc.image_size = t.value("image_size", tc.image_size);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        require_known_keys(
            e, {"eval_images", "sampler_steps", "folds", "probe_steps", "seed", "features"},
            "eval");
        c.eval.eval_images = e.value("eval_images", c.eval.eval_images);
        c.eval.sampler_steps = e.value("sampler_steps", c.eval.sampler_steps);
        c.eval.folds = e.value("folds", c.eval.folds);
        c.eval.probe_steps = e.value("probe_steps", c.eval.probe_steps);
        c.eval.seed = e.value("seed", c.eval.seed);
        c.eval.features = e.value("features", c.eval.features);
        if (c.eval.features != "handcrafted" && c.eval.features != "probe")
            throw data_error("config: eval.features must be 'handcrafted' or 'probe'");
    }
    if (j.contains("adapt")) {
        const json& a = j.at("adapt");
        require_known_keys(a, {"finetune_steps", "finetune_batch", "finetune_lr", "work_dir"},
                           "adapt");
        c.adapt.finetune_steps = a.value("finetune_steps", c.adapt.finetune_steps);
        c.adapt.finetune_batch = a.value("finetune_batch", c.adapt.finetune_batch);
        c.adapt.finetune_lr = a.value("finetune_lr", c.adapt.finetune_lr);
        c.adapt.work_dir = a.value("work_dir", c.adapt.work_dir);
    }
    if (j.contains("timelapse")) {
        const json& t = j.at("timelapse");
        require_known_keys(t, {"frames_per_sequence", "steps", "seed", "chain_previous"},
                           "timelapse");
        c.timelapse.frames_per_sequence =
            t.value("frames_per_sequence", c.timelapse.frames_per_sequence);
        c.timelapse.steps = t.value("steps", c.timelapse.steps);
        c.timelapse.seed = t.value("seed", c.timelapse.seed);
        c.timelapse.chain_previous = t.value("chain_previous", c.timelapse.chain_previous);
    }
    c.threads = j.value("threads", c.threads);
    c.out = j.value("out", c.out);
    c.adapt.eval = c.eval;
    return c;
}

RunConfig load_config(const std::string& path) {
    return parse_config(store::read_text_file(path));
}

std::string RunConfig::to_json() const {
    json j;
    j["dataset"] = dataset_to_json(dataset);
    if (shifted_dataset) j["shifted_dataset"] = dataset_to_json(*shifted_dataset);
    j["train"] = json::parse(train.to_json());
    j["eval"] = json{{"eval_images", eval.eval_images}, {"sampler_steps", eval.sampler_steps},
                     {"folds", eval.folds},             {"probe_steps", eval.probe_steps},
                     {"seed", eval.seed},               {"features", eval.features}};
    j["adapt"] = json{{"finetune_steps", adapt.finetune_steps},
                      {"finetune_batch", adapt.finetune_batch},
                      {"finetune_lr", adapt.finetune_lr},
                      {"work_dir", adapt.work_dir}};
    j["timelapse"] = json{{"frames_per_sequence", timelapse.frames_per_sequence},
                          {"steps", timelapse.steps},
                          {"seed", timelapse.seed},
                          {"chain_previous", timelapse.chain_previous}};
    j["threads"] = threads;
    j["out"] = out;
    return j.dump(2) + "\n";
}

}  // namespace monetlab::config
