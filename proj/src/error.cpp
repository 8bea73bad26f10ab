#include "shift/error.hpp"

namespace shift {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_row: return "MalformedRow";
    case ErrorCode::inconsistent_category: return "InconsistentCategory";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::incomplete_dataset: return "IncompleteDataset";
    case ErrorCode::invalid_ratios: return "InvalidRatios";
    case ErrorCode::window_too_long: return "WindowTooLong";
    case ErrorCode::invalid_profile: return "InvalidProfile";
    case ErrorCode::malformed_prediction: return "MalformedPrediction";
    case ErrorCode::empty_corpus: return "EmptyCorpus";
    case ErrorCode::unknown_id: return "UnknownId";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::non_finite: return "NonFiniteValue";
    case ErrorCode::not_scalar: return "NotScalar";
    case ErrorCode::sequence_too_long: return "SequenceTooLong";
    case ErrorCode::wrong_length: return "WrongLength";
    case ErrorCode::empty_target: return "EmptyTarget";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::vocab_mismatch: return "VocabMismatch";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::singular_system: return "SingularSystem";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::io_error: return "IoError";
  }
  return "UnknownError";
}

}  // namespace shift
