#include "dtm/error.hpp"

namespace dtm {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid input";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Contract: return "contract error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Corruption: return "corruption error";
        case ErrorKind::Index: return "index error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Data: return "data error";
        case ErrorKind::Config: return "config error";
    }
    return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace dtm
