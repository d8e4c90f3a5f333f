# Tests package for the sentence ranker
