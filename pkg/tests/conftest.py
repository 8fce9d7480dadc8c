import logging

# keep expected-warning chatter (small strata, truncation) out of test output
logging.getLogger("claimcheck").setLevel(logging.ERROR)
