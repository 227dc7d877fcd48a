// ubnn: run, verify and analyze packed binary networks and quantized forests.
//
// Exit codes: 0 ok, 1 verification mismatch, 2 usage, 3 IO,
// 4 format/validation, 5 input shape mismatch.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ubnn/builder.hpp"
#include "ubnn/engine.hpp"
#include "ubnn/error.hpp"
#include "ubnn/format.hpp"
#include "ubnn/interchange.hpp"
#include "ubnn/model.hpp"
#include "ubnn/oracle.hpp"
#include "ubnn/random.hpp"
#include "ubnn/rf.hpp"

namespace {

using namespace ubnn;

constexpr int kExitOk = 0;
constexpr int kExitMismatch = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitShape = 5;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kIo:
      return kExitIo;
    case ErrorCode::kShapeMismatch:
      return kExitShape;
    default:
      return kExitFormat;
  }
}

// ---------------------------------------------------------------------------
// CSV input

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::int64_t> values;
};

std::vector<CsvRow> read_csv(const std::string& path, std::int64_t lo, std::int64_t hi) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::vector<CsvRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    CsvRow row{line_no, {}};
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = std::min(line.find(',', pos), line.size());
      std::string_view cell(line.data() + pos, comma - pos);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
      if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
      std::int64_t v = 0;
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || end != cell.data() + cell.size()) {
        throw Error(ErrorCode::kValidation, path + ":" + std::to_string(line_no) +
                                                ": not an integer: '" + std::string(cell) + "'");
      }
      if (v < lo || v > hi) {
        throw Error(ErrorCode::kValidation, path + ":" + std::to_string(line_no) + ": value " +
                                                std::to_string(v) + " outside [" + std::to_string(lo) +
                                                ", " + std::to_string(hi) + "]");
      }
      row.values.push_back(v);
      if (comma == line.size()) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  if (in.bad()) throw Error(ErrorCode::kIo, "read error on " + path);
  return rows;
}

// Splits the optional trailing label column off every row.
std::vector<std::size_t> take_labels(std::vector<CsvRow>& rows, std::size_t width, std::size_t n_classes,
                                     const std::string& path) {
  std::vector<std::size_t> labels;
  for (auto& r : rows) {
    if (r.values.size() != width + 1) {
      throw Error(ErrorCode::kShapeMismatch, path + ":" + std::to_string(r.line) + ": expected " +
                                                 std::to_string(width) + " values plus a label, got " +
                                                 std::to_string(r.values.size()) + " columns");
    }
    const auto label = r.values.back();
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw Error(ErrorCode::kValidation, path + ":" + std::to_string(r.line) + ": label " +
                                              std::to_string(label) + " outside [0, " +
                                              std::to_string(n_classes) + ")");
    }
    labels.push_back(static_cast<std::size_t>(label));
    r.values.pop_back();
  }
  return labels;
}

void check_width(const std::vector<CsvRow>& rows, std::size_t width, const std::string& path) {
  for (const auto& r : rows) {
    if (r.values.size() != width) {
      throw Error(ErrorCode::kShapeMismatch, path + ":" + std::to_string(r.line) + ": expected " +
                                                 std::to_string(width) + " columns, got " +
                                                 std::to_string(r.values.size()));
    }
  }
}

std::vector<std::int8_t> to_int8(const CsvRow& r) { return {r.values.begin(), r.values.end()}; }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void print_accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  std::fprintf(stderr, "accuracy: %zu / %zu\n", correct, labels.size());
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  std::string model;
  std::string csv;
  bool scores = false;
  bool labels = false;
};

int cmd_run(const RunOptions& opt) {
  const Engine engine(load(opt.model));
  const auto& spec = engine.network().input;
  const std::int64_t lo = spec.domain == InputDomain::kBinary ? -1 : -128;
  const std::int64_t hi = spec.domain == InputDomain::kBinary ? 1 : 127;
  auto rows = read_csv(opt.csv, lo, hi);
  const std::size_t width = spec.timesteps * spec.channels;
  std::vector<std::size_t> labels;
  if (opt.labels) {
    labels = take_labels(rows, width, engine.network().n_classes, opt.csv);
  } else {
    check_width(rows, width, opt.csv);
  }
  std::vector<std::size_t> predictions;
  std::string out;
  for (const auto& r : rows) {
    const auto row = to_int8(r);
    if (spec.domain == InputDomain::kBinary) {
      for (auto v : row) {
        if (v == 0) throw Error(ErrorCode::kValidation, opt.csv + ":" + std::to_string(r.line) + ": binary input must be +1 or -1");
      }
    }
    const auto trace = engine.run(make_input(spec, row));
    predictions.push_back(trace.prediction);
    out += std::to_string(trace.prediction);
    if (opt.scores) {
      for (auto s : trace.scores) out += "," + format_double(from_q16(s));
    }
    out += '\n';
  }
  std::fputs(out.c_str(), stdout);
  if (opt.labels) print_accuracy(predictions, labels);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
  std::string model;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::string manifest;
  std::optional<std::size_t> inject_fault;
};

// Complements the decision of output channel 0 of a conv layer.
Network inject_fault(Network net, std::size_t index) {
  if (index >= net.layers.size()) throw UsageError("--inject-fault: no layer " + std::to_string(index));
  auto flip = [](ThresholdSpec& th) {
    const std::int64_t t = th.threshold;
    const std::int64_t flipped = th.direction == Direction::kGeq ? t - 1 : t + 1;
    if (flipped < std::numeric_limits<std::int32_t>::min() || flipped > std::numeric_limits<std::int32_t>::max()) {
      throw UsageError("--inject-fault: threshold cannot be complemented");
    }
    th = {static_cast<std::int32_t>(flipped), th.direction == Direction::kGeq ? Direction::kLeq : Direction::kGeq};
  };
  Layer& layer = net.layers[index];
  if (auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
    flip(c8->thresholds[0]);
  } else if (auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
    flip(cb->thresholds[0]);
  } else {
    throw UsageError("--inject-fault: layer " + std::to_string(index) + " is not a convolution");
  }
  return net;
}

struct Mismatch {
  std::size_t stage_layer = 0;
  std::string where;
};

// Compares the packed trace against the oracle trace at every stage boundary
// and at the output.
std::optional<Mismatch> compare(const Engine& engine, const ForwardTrace& packed,
                                const oracle::ReferenceTrace& ref) {
  const auto stages = engine.stages();
  for (std::size_t s = 0; s < packed.activations.size(); ++s) {
    const auto& got = packed.activations[s];
    const auto& want = ref.activations[stages[s].last_layer];
    const std::string name = std::string(layer_name(engine.network().layers[stages[s].first_layer])) +
                             (stages[s].last_layer != stages[s].first_layer ? "+pool" : "");
    if (got.timesteps() != want.timesteps || got.channels() != want.channels) {
      return Mismatch{stages[s].first_layer, "layer " + std::to_string(stages[s].first_layer) + " (" + name + "): shape"};
    }
    for (std::size_t t = 0; t < want.timesteps; ++t) {
      for (std::size_t c = 0; c < want.channels; ++c) {
        const int bit = got.at(t, c) ? 1 : -1;
        if (bit != want.at(t, c)) {
          return Mismatch{stages[s].first_layer,
                          "layer " + std::to_string(stages[s].first_layer) + " (" + name + "), timestep " +
                              std::to_string(t) + ", channel " + std::to_string(c) + ": packed " +
                              (bit > 0 ? "+1" : "-1") + ", oracle " + (bit > 0 ? "-1" : "+1")};
        }
      }
    }
  }
  const std::size_t fc = engine.network().layers.size() - 1;
  for (std::size_t m = 0; m < packed.scores.size(); ++m) {
    if (from_q16(packed.scores[m]) != ref.scores[m]) {
      return Mismatch{fc, "layer " + std::to_string(fc) + " (fc), class " + std::to_string(m) + ": score " +
                              format_double(from_q16(packed.scores[m])) + " vs oracle " +
                              format_double(ref.scores[m])};
    }
  }
  if (packed.prediction != ref.prediction) {
    return Mismatch{fc, "prediction " + std::to_string(packed.prediction) + " vs oracle " +
                            std::to_string(ref.prediction)};
  }
  return std::nullopt;
}

int check_manifest(const Engine& engine, const interchange::Manifest& m) {
  std::size_t bad = 0;
  std::optional<std::size_t> first;
  for (std::size_t i = 0; i < m.inputs.size(); ++i) {
    const auto pred = engine.classify(make_input(engine.network().input, m.inputs[i]));
    if (pred != m.predictions[i]) {
      if (!first) first = i;
      ++bad;
    }
  }
  std::printf("manifest: %zu mismatches / %zu inputs\n", bad, m.inputs.size());
  if (first) std::printf("first mismatch: input %zu, expected %zu\n", *first, m.predictions[*first]);
  return bad == 0 ? kExitOk : kExitMismatch;
}

const interchange::json& manifest_node(const interchange::json& doc) {
  if (const auto it = doc.find("manifest"); it != doc.end()) return *it;
  return doc;
}

int cmd_verify(const VerifyOptions& opt) {
  const Network net = load(opt.model);
  const Engine engine(opt.inject_fault ? inject_fault(net, *opt.inject_fault) : net);
  const auto ref = oracle::to_reference(net);
  const bool binary = net.input.domain == InputDomain::kBinary;

  random::Rng rng(opt.seed);
  std::size_t bad = 0;
  std::optional<std::pair<std::size_t, Mismatch>> first;
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    const auto row = random::input_row(rng, net.input);
    const auto packed = engine.run(make_input(net.input, row));
    const auto want = oracle::forward_reference(
        ref, oracle::from_int8(row, net.input.timesteps, net.input.channels, binary));
    if (auto m = compare(engine, packed, want)) {
      ++bad;
      if (!first) first.emplace(trial, std::move(*m));
    }
  }
  std::printf("%zu mismatches / %zu trials\n", bad, opt.trials);
  if (first) std::printf("first mismatch: trial %zu, %s\n", first->first, first->second.where.c_str());
  int status = bad == 0 ? kExitOk : kExitMismatch;

  if (!opt.manifest.empty()) {
    const auto bytes = read_file(opt.manifest);
    const auto doc = interchange::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    const auto m = interchange::manifest_from_json(manifest_node(doc), net.input.timesteps * net.input.channels,
                                                   net.n_classes);
    if (check_manifest(engine, m) != kExitOk) status = kExitMismatch;
  }
  return status;
}

// ---------------------------------------------------------------------------
// footprint / ops

std::string bytes_of(std::uint64_t bits) {
  const std::uint64_t whole = bits / 8;
  return bits % 8 == 0 ? std::to_string(whole) : std::to_string(whole) + "." + std::to_string(bits % 8 * 125);
}

std::string overhead_text(std::uint64_t raw, std::uint64_t padded) {
  if (raw == 0) return "-";
  if (padded % raw == 0) {
    const std::uint64_t x = padded / raw - 1;
    return std::to_string(x) + "x overhead (" + std::to_string(x * 100) + "%)";
  }
  const double x = static_cast<double>(padded) / static_cast<double>(raw) - 1.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2fx overhead (%.1f%%)", x, x * 100.0);
  return buf;
}

int cmd_footprint(const std::string& path, bool padded32) {
  const Network net = load(path);
  const auto report = footprint(net);
  std::printf("model: %s\n", describe(net).c_str());
  std::printf("%-5s %-8s %14s %16s %16s %18s", "layer", "type", "raw_bits", "aligned_bits",
              "threshold_bits", "activation_bits");
  if (padded32) std::printf(" %16s  %s", "padded32_bits", "vs raw");
  std::printf("\n");
  auto row = [&](const std::string& idx, const char* type, const LayerFootprint& f) {
    std::printf("%-5s %-8s %14llu %16llu %16llu %18llu", idx.c_str(), type,
                static_cast<unsigned long long>(f.raw_weight_bits),
                static_cast<unsigned long long>(f.aligned_weight_bits),
                static_cast<unsigned long long>(f.threshold_bits),
                static_cast<unsigned long long>(f.activation_buffer_bits));
    if (padded32) {
      std::printf(" %16llu  %s", static_cast<unsigned long long>(f.padded32_weight_bits),
                  overhead_text(f.raw_weight_bits, f.padded32_weight_bits).c_str());
    }
    std::printf("\n");
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    row(std::to_string(i), layer_name(net.layers[i]), report.layers[i]);
  }
  row("total", "", report.total);
  const auto& t = report.total;
  std::printf("weights: raw %llu bits (%s bytes), word-aligned %llu bits (%s bytes)\n",
              static_cast<unsigned long long>(t.raw_weight_bits), bytes_of(t.raw_weight_bits).c_str(),
              static_cast<unsigned long long>(t.aligned_weight_bits), bytes_of(t.aligned_weight_bits).c_str());
  std::printf("thresholds and score parameters: %llu bits (%s bytes)\n",
              static_cast<unsigned long long>(t.threshold_bits), bytes_of(t.threshold_bits).c_str());
  std::printf("activation buffers: %llu bits (%s bytes)\n",
              static_cast<unsigned long long>(t.activation_buffer_bits),
              bytes_of(t.activation_buffer_bits).c_str());
  if (padded32) {
    std::printf("padded to multiples of 32 channels: %llu bits (%s bytes), %s\n",
                static_cast<unsigned long long>(t.padded32_weight_bits),
                bytes_of(t.padded32_weight_bits).c_str(),
                overhead_text(t.raw_weight_bits, t.padded32_weight_bits).c_str());
  }
  return kExitOk;
}

int cmd_ops(const std::string& path) {
  const Network net = load(path);
  const auto report = count_ops(net);
  std::printf("model: %s\n", describe(net).c_str());
  std::printf("%-5s %-8s %14s %14s %14s %12s %14s\n", "layer", "type", "xnor_words", "popcounts",
              "thresholds", "or_ops", "int8_macs");
  auto row = [](const std::string& idx, const char* type, const OpCounters& c) {
    std::printf("%-5s %-8s %14llu %14llu %14llu %12llu %14llu\n", idx.c_str(), type,
                static_cast<unsigned long long>(c.xnor_word_ops),
                static_cast<unsigned long long>(c.popcount_ops),
                static_cast<unsigned long long>(c.threshold_compares),
                static_cast<unsigned long long>(c.or_ops), static_cast<unsigned long long>(c.int8_macs));
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) row(std::to_string(i), layer_name(net.layers[i]), report.layers[i]);
  row("total", "", report.total);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// rf-run / rf-verify

std::vector<std::vector<std::int8_t>> forest_inputs(const rf::Forest& f, const std::string& csv, bool raw) {
  std::vector<std::vector<std::int8_t>> out;
  if (raw) {
    auto rows = read_csv(csv, std::numeric_limits<std::int16_t>::min(), std::numeric_limits<std::int16_t>::max());
    check_width(rows, rf::kWindow * rf::kAxes, csv);
    if (f.n_features != rf::kFeatureCount) {
      throw Error(ErrorCode::kShapeMismatch, "forest expects " + std::to_string(f.n_features) +
                                                 " features, raw windows give " + std::to_string(rf::kFeatureCount));
    }
    for (const auto& r : rows) {
      const std::vector<std::int16_t> window(r.values.begin(), r.values.end());
      const auto features = rf::extract_features(window);
      out.push_back(rf::quantize_features(features, f.quantizer));
    }
  } else {
    auto rows = read_csv(csv, -128, 127);
    check_width(rows, f.n_features, csv);
    for (const auto& r : rows) out.push_back(to_int8(r));
  }
  return out;
}

int cmd_rf_run(const std::string& path, const std::string& csv, bool raw, bool scores) {
  const auto forest = rf::load(path);
  std::string out;
  for (const auto& x : forest_inputs(forest, csv, raw)) {
    const auto s = rf::rf_scores(x, forest);
    out += std::to_string(rf::rf_predict(x, forest));
    if (scores) {
      for (auto v : s) out += "," + std::to_string(v);
    }
    out += '\n';
  }
  std::fputs(out.c_str(), stdout);
  return kExitOk;
}

struct RfVerifyOptions {
  std::string forest;
  std::string csv;
  bool raw = false;
  std::size_t trials = 10000;
  std::uint64_t seed = 0;
  std::string manifest;
};

int cmd_rf_verify(const RfVerifyOptions& opt) {
  const auto forest = rf::load(opt.forest);
  const auto trees = rf::unflatten(forest);
  std::vector<std::vector<std::int8_t>> inputs;
  if (!opt.csv.empty()) {
    inputs = forest_inputs(forest, opt.csv, opt.raw);
  } else {
    random::Rng rng(opt.seed);
    for (std::size_t i = 0; i < opt.trials; ++i) inputs.push_back(random::int8_row(rng, forest.n_features));
  }
  std::size_t bad = 0;
  std::optional<std::size_t> first;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (rf::rf_predict(inputs[i], forest) != rf::predict_recursive(trees, forest.n_classes, inputs[i])) {
      if (!first) first = i;
      ++bad;
    }
  }
  std::printf("%zu mismatches / %zu %s\n", bad, inputs.size(), opt.csv.empty() ? "trials" : "inputs");
  if (first) std::printf("first mismatch: input %zu\n", *first);
  int status = bad == 0 ? kExitOk : kExitMismatch;

  if (!opt.manifest.empty()) {
    const auto bytes = read_file(opt.manifest);
    const auto doc = interchange::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    const auto& node = manifest_node(doc);
    const bool raw = node.value("kind", std::string("features")) == "raw";
    const auto m = interchange::manifest_from_json(node, raw ? rf::kWindow * rf::kAxes : forest.n_features,
                                                   forest.n_classes);
    std::size_t mbad = 0;
    for (std::size_t i = 0; i < m.inputs.size(); ++i) {
      std::vector<std::int8_t> x = m.inputs[i];
      if (raw) {
        const std::vector<std::int16_t> window(x.begin(), x.end());
        x = rf::quantize_features(rf::extract_features(window), forest.quantizer);
      }
      mbad += rf::rf_predict(x, forest) != m.predictions[i];
    }
    std::printf("manifest: %zu mismatches / %zu inputs\n", mbad, m.inputs.size());
    if (mbad != 0) status = kExitMismatch;
  }
  return status;
}

// ---------------------------------------------------------------------------
// convert / generate

int cmd_convert(const std::string& in, const std::string& out) {
  const auto bytes = read_file(in);
  const auto doc = interchange::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  const auto converted = interchange::from_json(doc);
  write_file(out, interchange::to_binary(converted));
  if (const auto* net = std::get_if<Network>(&converted)) {
    std::printf("wrote %s: UBN1 model, %s\n", out.c_str(), describe(*net).c_str());
  } else {
    const auto& f = std::get<rf::Forest>(converted);
    std::printf("wrote %s: URF1 forest, %zu trees, %zu nodes\n", out.c_str(), f.roots.size(), f.nodes.size());
  }
  return kExitOk;
}

struct GenerateOptions {
  std::string arch;
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  std::string domain = "int8";
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  std::string out;
  bool json = false;
};

int cmd_generate(const GenerateOptions& opt) {
  if (opt.domain != "int8" && opt.domain != "binary") throw UsageError("--domain must be int8 or binary");
  const InputSpec input{opt.timesteps, opt.channels, opt.domain == "int8" ? InputDomain::kInt8 : InputDomain::kBinary};
  const auto arch = parse_architecture(opt.arch);
  random::Rng rng(opt.seed);
  const Network net = build_network(random::reference_network(rng, arch, input, opt.classes));
  if (opt.json) {
    const std::string text = interchange::network_to_json(net).dump(2) + "\n";
    write_file(opt.out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  } else {
    save(net, opt.out);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-packed binary network and quantized forest inference"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Classify CSV windows with a UBN1 model");
  run_cmd->add_option("model", run.model, "UBN1 model file")->required();
  run_cmd->add_option("csv", run.csv, "One window per row, time-major")->required();
  run_cmd->add_flag("--scores", run.scores, "Also print the class scores");
  run_cmd->add_flag("--labels", run.labels, "Last column is a label; report accuracy on stderr");

  VerifyOptions verify;
  auto* verify_cmd = app.add_subcommand("verify", "Compare packed inference with the dense oracle");
  verify_cmd->add_option("model", verify.model, "UBN1 model file")->required();
  verify_cmd->add_option("--trials", verify.trials, "Random inputs to check")->capture_default_str();
  verify_cmd->add_option("--seed", verify.seed, "Input RNG seed")->capture_default_str();
  verify_cmd->add_option("--manifest", verify.manifest, "JSON eval manifest to check as well");
  verify_cmd->add_option("--inject-fault", verify.inject_fault,
                         "Complement output channel 0 of this conv layer in the packed path");

  std::string fp_model;
  bool padded32 = false;
  auto* fp_cmd = app.add_subcommand("footprint", "Weight, threshold and activation storage");
  fp_cmd->add_option("model", fp_model, "UBN1 model file")->required();
  fp_cmd->add_flag("--padded32", padded32, "Compare against channel counts padded to 32");

  std::string ops_model;
  auto* ops_cmd = app.add_subcommand("ops", "Per-inference word-operation counts");
  ops_cmd->add_option("model", ops_model, "UBN1 model file")->required();

  std::string rf_path, rf_csv;
  bool rf_raw = false, rf_scores = false;
  auto* rf_run_cmd = app.add_subcommand("rf-run", "Classify with a URF1 forest");
  rf_run_cmd->add_option("forest", rf_path, "URF1 forest file")->required();
  rf_run_cmd->add_option("csv", rf_csv, "Quantized features, or raw 32x3 windows with --raw")->required();
  rf_run_cmd->add_flag("--raw", rf_raw, "Rows are raw windows; extract and quantize features first");
  rf_run_cmd->add_flag("--scores", rf_scores, "Also print the accumulated class sums");

  RfVerifyOptions rfv;
  auto* rf_verify_cmd = app.add_subcommand("rf-verify", "Compare flattened traversal with recursive traversal");
  rf_verify_cmd->add_option("forest", rfv.forest, "URF1 forest file")->required();
  rf_verify_cmd->add_option("csv", rfv.csv, "Inputs to check instead of random feature vectors");
  rf_verify_cmd->add_flag("--raw", rfv.raw, "CSV rows are raw windows");
  rf_verify_cmd->add_option("--trials", rfv.trials, "Random feature vectors when no CSV is given")->capture_default_str();
  rf_verify_cmd->add_option("--seed", rfv.seed, "RNG seed")->capture_default_str();
  rf_verify_cmd->add_option("--manifest", rfv.manifest, "JSON eval manifest to check as well");

  std::string conv_in, conv_out;
  auto* convert_cmd = app.add_subcommand("convert", "Convert interchange JSON to UBN1 / URF1");
  convert_cmd->add_option("json", conv_in, "Interchange JSON")->required();
  convert_cmd->add_option("out", conv_out, "Output file")->required();

  GenerateOptions gen;
  auto* gen_cmd = app.add_subcommand("generate", "Random model for an architecture string");
  gen_cmd->add_option("arch", gen.arch, "e.g. \"Conv(2,7), Conv(2,15), Pool(4,4), FC\"")->required();
  gen_cmd->add_option("out", gen.out, "Output file")->required();
  gen_cmd->add_option("--timesteps", gen.timesteps, "Input timesteps")->required();
  gen_cmd->add_option("--channels", gen.channels, "Input channels")->required();
  gen_cmd->add_option("--domain", gen.domain, "int8 or binary")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  gen_cmd->add_flag("--json", gen.json, "Write interchange JSON instead of UBN1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*verify_cmd) return cmd_verify(verify);
    if (*fp_cmd) return cmd_footprint(fp_model, padded32);
    if (*ops_cmd) return cmd_ops(ops_model);
    if (*rf_run_cmd) return cmd_rf_run(rf_path, rf_csv, rf_raw, rf_scores);
    if (*rf_verify_cmd) return cmd_rf_verify(rfv);
    if (*convert_cmd) return cmd_convert(conv_in, conv_out);
    if (*gen_cmd) return cmd_generate(gen);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  }
  return kExitUsage;
}
