#include "zol2l/lstm_io.hpp"

#include <array>
#include <cmath>

namespace zol2l {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 4> kGateSuffix = {"i", "f", "g", "o"};

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorKind::kMalformedDocument, "malformed model document: " + what);
}

[[noreturn]] void shape_mismatch(const std::string& what) {
  throw Error(ErrorKind::kShapeMismatch, "model shape mismatch: " + what);
}

double read_scalar(const json& v, const std::string& name) {
  if (v.is_number()) {
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw NumericError("non-finite value in tensor " + name);
    return x;
  }
  if (v.is_null()) throw NumericError("null (non-finite) value in tensor " + name);
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "NaN" || s == "nan" || s == "Infinity" || s == "-Infinity" || s == "inf" ||
        s == "-inf")
      throw NumericError("non-finite value '" + s + "' in tensor " + name);
  }
  malformed("tensor " + name + " contains a non-numeric entry");
}

Index read_dim(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_number_integer()) malformed(std::string("missing integer '") + key + "'");
  return doc[key].get<Index>();
}

}  // namespace

json tensor_to_json(const Matrix& m) {
  json data = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

json tensor_to_json(const Vector& v) {
  json data = json::array();
  for (Index k = 0; k < v.size(); ++k) data.push_back(v[k]);
  return {{"shape", {v.size()}}, {"data", std::move(data)}};
}

Matrix tensor_from_json(const json& t, Index rows, Index cols, bool is_vector,
                        const std::string& name) {
  if (!t.is_object() || !t.contains("shape") || !t.contains("data") || !t["shape"].is_array() ||
      !t["data"].is_array())
    malformed("tensor " + name + " needs 'shape' and 'data' arrays");
  std::vector<Index> shape;
  for (const auto& s : t["shape"]) {
    if (!s.is_number_integer()) malformed("tensor " + name + " has a non-integer shape");
    shape.push_back(s.get<Index>());
  }
  const std::vector<Index> expected =
      is_vector ? std::vector<Index>{rows} : std::vector<Index>{rows, cols};
  if (shape != expected) shape_mismatch("tensor " + name);
  const auto& data = t["data"];
  if (static_cast<Index>(data.size()) != rows * cols)
    shape_mismatch("tensor " + name + " data length disagrees with its shape");
  Matrix m(rows, cols);
  Index k = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = read_scalar(data[k++], name);
  return m;
}

json lstm_to_json(const LstmParams<double>& p) {
  json tensors = json::object();
  for (int k = 0; k < 4; ++k) {
    const std::string s = kGateSuffix[k];
    tensors["w_i" + s] = tensor_to_json(p.gates[k].w_in);
    tensors["w_h" + s] = tensor_to_json(p.gates[k].w_hid);
    tensors["b_" + s] = tensor_to_json(p.gates[k].bias);
  }
  tensors["w_head"] = tensor_to_json(Matrix(p.head_w));
  tensors["b_head"] = tensor_to_json(Vector(Vector::Constant(1, p.head_b)));
  return {{"schema", kLstmSchema},
          {"input_dim", p.input_dim},
          {"hidden_dim", kLstmHidden},
          {"output_dim", kLstmOutput},
          {"tensors", std::move(tensors)}};
}

LstmParams<double> lstm_from_json(const json& doc) {
  if (!doc.is_object()) malformed("top level is not an object");
  if (!doc.contains("schema") || doc["schema"] != kLstmSchema) malformed("schema is not zo-l2l-lstm/1");
  const Index input_dim = read_dim(doc, "input_dim");
  const Index hidden = read_dim(doc, "hidden_dim");
  const Index output = read_dim(doc, "output_dim");
  if (input_dim != 1 && input_dim != 2) shape_mismatch("input_dim must be 1 or 2");
  if (hidden != kLstmHidden) shape_mismatch("hidden_dim must be 10");
  if (output != kLstmOutput) shape_mismatch("output_dim must be 1");
  if (!doc.contains("tensors") || !doc["tensors"].is_object()) malformed("missing 'tensors' object");
  const auto& tensors = doc["tensors"];
  auto get = [&](const std::string& name) -> const json& {
    if (!tensors.contains(name)) malformed("missing tensor " + name);
    return tensors[name];
  };

  auto p = LstmParams<double>::zeros(input_dim);
  for (int k = 0; k < 4; ++k) {
    const std::string s = kGateSuffix[k];
    p.gates[k].w_in = tensor_from_json(get("w_i" + s), kLstmHidden, input_dim, false, "w_i" + s);
    p.gates[k].w_hid = tensor_from_json(get("w_h" + s), kLstmHidden, kLstmHidden, false, "w_h" + s);
    p.gates[k].bias = tensor_from_json(get("b_" + s), kLstmHidden, 1, true, "b_" + s);
  }
  p.head_w = tensor_from_json(get("w_head"), kLstmOutput, kLstmHidden, false, "w_head");
  p.head_b = tensor_from_json(get("b_head"), kLstmOutput, 1, true, "b_head")(0, 0);
  return p;
}

std::string serialize_params(const LstmParams<double>& params) {
  return lstm_to_json(params).dump(1);
}

LstmParams<double> deserialize_params(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    malformed(e.what());
  }
  return lstm_from_json(doc);
}

}  // namespace zol2l
