// Copyright 2026 The Evoengine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "evo/config.h"

#include <fstream>
#include <functional>
#include <map>

#include "evo/errors.h"

namespace evo {

using nlohmann::json;

bool ExecutionPlan::recompute_evoformer() const {
  for (const std::string& s : recompute) {
    if (s == "evoformer") return true;
  }
  return false;
}

ExecContext ExecutionPlan::exec() const {
  ExecContext ctx;
  ctx.attention = fuse_ops ? AttentionImpl::kFused : AttentionImpl::kReference;
  ctx.chunk = chunk;
  ctx.recompute = recompute_evoformer();
  ctx.activation = activation;
  return ctx;
}

void ExecutionPlan::validate(const ModelConfig& cfg) const {
  grid().validate(cfg);
  for (std::size_t i = 0; i < recompute.size(); ++i) {
    const std::string& s = recompute[i];
    const std::string path = "plan.recompute[" + std::to_string(i) + "]";
    if (s == "extra_msa" || s == "template_pair") {
      throw ConfigError(path, "'" + s + "' is a planner-only stack");
    }
    if (s != "evoformer") throw ConfigError(path, "unknown stack '" + s + "'");
  }
  if (chunk < 0) throw ConfigError("plan.chunk", "must be >= 0 (0 = off)");
  if (steps < 1) throw ConfigError("plan.steps", "must be >= 1");
  if (recycles < 0 || recycles > 4) throw ConfigError("plan.recycles", "must be 0 (drawn) or 1..4");
  if (!(lr > 0.0)) throw ConfigError("plan.lr", "must be > 0");
  if (warmup_steps < 0) throw ConfigError("plan.warmup_steps", "must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("plan.clip_norm", "must be > 0");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("plan.ema_decay", "must be in (0, 1)");
  if (alignment < 4 || (alignment & (alignment - 1)) != 0) {
    throw ConfigError("plan.alignment", "must be a power of two >= 4");
  }
}

namespace {

std::string type_name(const json& v) { return v.type_name(); }

template <typename T>
T as(const json& v, const std::string& path);

template <>
std::int64_t as(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path, "expected an integer, got " + type_name(v));
  return v.get<std::int64_t>();
}

template <>
int as(const json& v, const std::string& path) {
  return static_cast<int>(as<std::int64_t>(v, path));
}

template <>
std::uint64_t as(const json& v, const std::string& path) {
  const std::int64_t x = as<std::int64_t>(v, path);
  if (x < 0) throw ConfigError(path, "must be >= 0");
  return static_cast<std::uint64_t>(x);
}

template <>
double as(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number, got " + type_name(v));
  return v.get<double>();
}

template <>
bool as(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected a boolean, got " + type_name(v));
  return v.get<bool>();
}

template <>
std::string as(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string, got " + type_name(v));
  return v.get<std::string>();
}

template <>
DType as(const json& v, const std::string& path) {
  const std::string s = as<std::string>(v, path);
  if (s == "f32") return DType::kF32;
  if (s == "bf16") return DType::kBF16;
  throw ConfigError(path, "expected \"f32\" or \"bf16\", got \"" + s + "\"");
}

template <>
std::vector<std::string> as(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array, got " + type_name(v));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as<std::string>(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

using Setter = std::function<void(const json&, const std::string&)>;

template <typename T>
Setter bind(T& field) {
  return [&field](const json& v, const std::string& path) { field = as<T>(v, path); };
}

void read_object(const json& j, const std::string& prefix, const std::map<std::string, Setter>& fields) {
  if (!j.is_object()) throw ConfigError(prefix, "expected an object, got " + type_name(j));
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix + "." + key;
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError(path, "unknown key");
    it->second(value, path);
  }
}

std::map<std::string, Setter> model_fields(ModelConfig& m) {
  return {{"batch", bind(m.batch)},
          {"n_seq", bind(m.n_seq)},
          {"n_res", bind(m.n_res)},
          {"n_extra_seq", bind(m.n_extra_seq)},
          {"n_templ", bind(m.n_templ)},
          {"n_extra_blocks", bind(m.n_extra_blocks)},
          {"n_template_blocks", bind(m.n_template_blocks)},
          {"c_m", bind(m.c_m)},
          {"c_z", bind(m.c_z)},
          {"c_e", bind(m.c_e)},
          {"heads_msa", bind(m.heads_msa)},
          {"heads_pair", bind(m.heads_pair)},
          {"n_blocks", bind(m.n_blocks)},
          {"c_opm", bind(m.c_opm)},
          {"transition_factor", bind(m.transition_factor)},
          {"feat_msa", bind(m.feat_msa)},
          {"feat_pair", bind(m.feat_pair)},
          {"mask_padding", bind(m.mask_padding)}};
}

std::map<std::string, Setter> plan_fields(ExecutionPlan& p) {
  return {{"dp", bind(p.dp)},
          {"bp", bind(p.bp)},
          {"dap", bind(p.dap)},
          {"fuse_ops", bind(p.fuse_ops)},
          {"fuse_tensors", bind(p.fuse_tensors)},
          {"recompute", bind(p.recompute)},
          {"activation", bind(p.activation)},
          {"chunk", bind(p.chunk)},
          {"seed", bind(p.seed)},
          {"steps", bind(p.steps)},
          {"recycles", bind(p.recycles)},
          {"lr", bind(p.lr)},
          {"warmup_steps", bind(p.warmup_steps)},
          {"clip_norm", bind(p.clip_norm)},
          {"ema_decay", bind(p.ema_decay)},
          {"alignment", bind(p.alignment)}};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig rc;
  std::map<std::string, Setter> top{
      {"model", [&](const json& v, const std::string& path) { read_object(v, path, model_fields(rc.model)); }},
      {"plan", [&](const json& v, const std::string& path) { read_object(v, path, plan_fields(rc.plan)); }},
      {"out_dir", bind(rc.out_dir)}};
  if (!j.is_object()) throw ConfigError("config", "expected an object, got " + type_name(j));
  for (const auto& [key, value] : j.items()) {
    auto it = top.find(key);
    if (it == top.end()) throw ConfigError(key, "unknown key");
    it->second(value, key);
  }
  rc.model.activation = rc.plan.activation;
  rc.model.validate();
  rc.plan.validate(rc.model);
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  return from_json(j);
}

json model_to_json(const ModelConfig& m) {
  return {{"batch", m.batch},
          {"n_seq", m.n_seq},
          {"n_res", m.n_res},
          {"n_extra_seq", m.n_extra_seq},
          {"n_templ", m.n_templ},
          {"n_extra_blocks", m.n_extra_blocks},
          {"n_template_blocks", m.n_template_blocks},
          {"c_m", m.c_m},
          {"c_z", m.c_z},
          {"c_e", m.c_e},
          {"heads_msa", m.heads_msa},
          {"heads_pair", m.heads_pair},
          {"n_blocks", m.n_blocks},
          {"c_opm", m.c_opm},
          {"transition_factor", m.transition_factor},
          {"feat_msa", m.feat_msa},
          {"feat_pair", m.feat_pair},
          {"mask_padding", m.mask_padding}};
}

json plan_to_json(const ExecutionPlan& p) {
  return {{"dp", p.dp},
          {"bp", p.bp},
          {"dap", p.dap},
          {"fuse_ops", p.fuse_ops},
          {"fuse_tensors", p.fuse_tensors},
          {"recompute", p.recompute},
          {"activation", p.activation == DType::kBF16 ? "bf16" : "f32"},
          {"chunk", p.chunk},
          {"seed", p.seed},
          {"steps", p.steps},
          {"recycles", p.recycles},
          {"lr", p.lr},
          {"warmup_steps", p.warmup_steps},
          {"clip_norm", p.clip_norm},
          {"ema_decay", p.ema_decay},
          {"alignment", p.alignment}};
}

json RunConfig::to_json() const {
  return {{"model", model_to_json(model)}, {"plan", plan_to_json(plan)}, {"out_dir", out_dir}};
}

}  // namespace evo
