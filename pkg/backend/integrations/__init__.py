# File-based inputs and outputs: instance documents, utility tables, CSV artifacts.
