#pragma once

#define OWDET_VERSION_MAJOR 0
#define OWDET_VERSION_MINOR 1
#define OWDET_VERSION_PATCH 0
#define OWDET_VERSION_STRING "0.1.0"

namespace owdet {

inline const char* version() { return OWDET_VERSION_STRING; }

}  // namespace owdet
