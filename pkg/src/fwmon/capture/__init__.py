from .corpus import (
    CLASSES, CorpusError, CorpusSpec, acceptance_spec, gen_corpus, gen_corpus_labeled, load_corpus,
    load_spec, save_corpus,
)
from .host import host_deliver
from .pcap import (
    LINKTYPE_ETHERNET, LINKTYPE_IEEE802_11_RADIOTAP, Capture, CaptureRecord, PcapError,
    read_pcap, write_pcap,
)
from .radiotap import RadiotapDefaults, RadiotapError, RadiotapHeader, build_radiotap, parse_radiotap
