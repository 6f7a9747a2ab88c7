#pragma once

// JSON (de)serialization of configuration objects. Parsing is strict: unknown
// keys and wrongly typed values raise ConfigError.

#include <cstdint>
#include <initializer_list>
#include <set>
#include <string>

#include <json.hpp>

#include "egl/errors.hpp"
#include "egl/model.hpp"
#include "egl/synthdata.hpp"
#include "egl/train.hpp"

namespace egl {

using Json = nlohmann::json;

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out, const char* where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const ModelConfig& c) {
  return Json{{"image_size", c.image_size},
              {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},
              {"num_classes", c.num_classes}};
}

inline ModelConfig model_config_from_json(const Json& j, ModelConfig c = {}) {
  detail::reject_unknown(j, {"image_size", "patch_size", "embed_dim", "num_classes"}, "model");
  detail::read_opt(j, "image_size", c.image_size, "model");
  detail::read_opt(j, "patch_size", c.patch_size, "model");
  detail::read_opt(j, "embed_dim", c.embed_dim, "model");
  detail::read_opt(j, "num_classes", c.num_classes, "model");
  c.validate();
  return c;
}

inline Json to_json(const GeneratorConfig& c) {
  return Json{{"n_train", c.n_train},
              {"n_val", c.n_val},
              {"n_test_id", c.n_test_id},
              {"n_test_ood", c.n_test_ood},
              {"image_size", c.image_size},
              {"classes", c.classes},
              {"shortcut_strength", c.shortcut_strength},
              {"subgroup_mix", c.subgroup_mix},
              {"noise_sigma", c.noise_sigma},
              {"seed", c.seed},
              {"prevalence", c.prevalence},
              {"marker_rate", c.marker_rate},
              {"lesion_contrast", c.lesion_contrast},
              {"disadvantaged_contrast", c.disadvantaged_contrast},
              {"disadvantaged", to_string(c.disadvantaged)}};
}

inline GeneratorConfig generator_config_from_json(const Json& j, GeneratorConfig c = {}) {
  detail::reject_unknown(j,
                         {"n_train", "n_val", "n_test_id", "n_test_ood", "image_size", "classes",
                          "shortcut_strength", "subgroup_mix", "noise_sigma", "seed", "prevalence",
                          "marker_rate", "lesion_contrast", "disadvantaged_contrast", "disadvantaged"},
                         "data");
  const char* w = "data";
  detail::read_opt(j, "n_train", c.n_train, w);
  detail::read_opt(j, "n_val", c.n_val, w);
  detail::read_opt(j, "n_test_id", c.n_test_id, w);
  detail::read_opt(j, "n_test_ood", c.n_test_ood, w);
  detail::read_opt(j, "image_size", c.image_size, w);
  detail::read_opt(j, "classes", c.classes, w);
  detail::read_opt(j, "shortcut_strength", c.shortcut_strength, w);
  detail::read_opt(j, "subgroup_mix", c.subgroup_mix, w);
  detail::read_opt(j, "noise_sigma", c.noise_sigma, w);
  detail::read_opt(j, "seed", c.seed, w);
  detail::read_opt(j, "prevalence", c.prevalence, w);
  detail::read_opt(j, "marker_rate", c.marker_rate, w);
  detail::read_opt(j, "lesion_contrast", c.lesion_contrast, w);
  detail::read_opt(j, "disadvantaged_contrast", c.disadvantaged_contrast, w);
  if (j.contains("disadvantaged")) {
    std::string s;
    detail::read_opt(j, "disadvantaged", s, w);
    if (s == "female") {
      c.disadvantaged = Sex::female;
    } else if (s == "male") {
      c.disadvantaged = Sex::male;
    } else {
      throw ConfigError("data.disadvantaged: expected 'female' or 'male'");
    }
  }
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.optimizer.learning_rate},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps},
              {"weight_decay", c.optimizer.weight_decay},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"alignment_level", c.alignment_level},
              {"alignment_mode", to_string(c.alignment_mode)},
              {"data_ratio", c.data_ratio},
              {"seed", c.seed},
              {"dice_alpha", c.dice.alpha},
              {"dice_epsilon", c.dice.epsilon},
              {"w_fp", c.dice.w_fp},
              {"threshold", c.threshold}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  detail::reject_unknown(j,
                         {"learning_rate", "beta1", "beta2", "eps", "weight_decay", "batch_size", "max_epochs",
                          "patience", "alignment_level", "alignment_mode", "data_ratio", "seed", "dice_alpha",
                          "dice_epsilon", "w_fp", "threshold"},
                         "train");
  const char* w = "train";
  detail::read_opt(j, "learning_rate", c.optimizer.learning_rate, w);
  detail::read_opt(j, "beta1", c.optimizer.beta1, w);
  detail::read_opt(j, "beta2", c.optimizer.beta2, w);
  detail::read_opt(j, "eps", c.optimizer.eps, w);
  detail::read_opt(j, "weight_decay", c.optimizer.weight_decay, w);
  detail::read_opt(j, "batch_size", c.batch_size, w);
  detail::read_opt(j, "max_epochs", c.max_epochs, w);
  detail::read_opt(j, "patience", c.patience, w);
  detail::read_opt(j, "alignment_level", c.alignment_level, w);
  if (j.contains("alignment_mode")) {
    std::string s;
    detail::read_opt(j, "alignment_mode", s, w);
    c.alignment_mode = parse_alignment_mode(s);
  }
  detail::read_opt(j, "data_ratio", c.data_ratio, w);
  detail::read_opt(j, "seed", c.seed, w);
  detail::read_opt(j, "dice_alpha", c.dice.alpha, w);
  detail::read_opt(j, "dice_epsilon", c.dice.epsilon, w);
  detail::read_opt(j, "w_fp", c.dice.w_fp, w);
  detail::read_opt(j, "threshold", c.threshold, w);
  return c;
}

}  // namespace egl
