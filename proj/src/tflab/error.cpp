#include "tflab/error.hpp"

namespace tflab {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::state: return "state error";
    case ErrorKind::format: return "format error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::data: return "data error";
    case ErrorKind::io: return "path error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::training: return "training error";
    case ErrorKind::task: return "task error";
  }
  return "error";
}

}  // namespace tflab
