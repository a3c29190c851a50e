#pragma once

#define MIXCL_VERSION "0.1.0"
