#ifndef ZOL2L_LSTM_IO_HPP
#define ZOL2L_LSTM_IO_HPP

#include <nlohmann/json.hpp>

#include "zol2l/lstm.hpp"

namespace zol2l {

inline constexpr const char* kLstmSchema = "zo-l2l-lstm/1";

nlohmann::json lstm_to_json(const LstmParams<double>& params);

/// Throws Error with kind kMalformedDocument, kShapeMismatch or kNonFinite.
LstmParams<double> lstm_from_json(const nlohmann::json& doc);

/// {"shape": [...], "data": [row-major]} encoding shared by the model files.
nlohmann::json tensor_to_json(const Matrix& m);
nlohmann::json tensor_to_json(const Vector& v);
/// Reads a tensor and checks it against the expected shape.
Matrix tensor_from_json(const nlohmann::json& t, Index rows, Index cols, bool is_vector,
                        const std::string& name);

}  // namespace zol2l

#endif  // ZOL2L_LSTM_IO_HPP
