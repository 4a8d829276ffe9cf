'''
Module      : dataprep
Description : Endoscopy image-text corpus construction.

Steps per video: keyframe sampling at a rate adapted to the video length, quality
filtering, frame-to-sentence alignment. The corpus is then split 8:2 per polyp type.
Every input frame ends up exactly once as an image-text pair or as a ledger entry
(not-sampled, low-quality, no-polyp, unaligned).

Synthetic videos stand in for real ones: each frame carries a render key
(type, location, size, sentence variant) and a noise seed, and its patch grid is drawn
from those on demand:
  - channel of the polyp type (0-3) raised by 1 over the whole grid
  - channel 4: Gaussian blob centred on the column of the location, width from the size
  - channel 5: disc of the size radius around the same centre
  - channel 6: +1 for the first sentence variant, -1 for the second
  - uniform noise in +-0.1 on every channel
'''

import concurrent.futures
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from math import ceil, floor

import numpy as np

try:
    from LDP.errors import ConfigError, DataError, ValidationError
    from LDP.tokenizer import tokenize_text
except ModuleNotFoundError:
    from errors import ConfigError, DataError, ValidationError
    from tokenizer import tokenize_text

POLYP_TYPES = ('adenomatous', 'hyperplastic', 'serrated', 'inflammatory')
LOCATIONS = ('cecum', 'ascending colon', 'transverse colon', 'descending colon', 'sigmoid colon', 'rectum')
SIZES = ('diminutive', 'small', 'large')
SIZE_MM = {'diminutive': 4, 'small': 8, 'large': 15}
SIZE_RADII = (1.0, 1.8, 2.6)
REPORT_TEMPLATES = ('a {size} {type} polyp in the {location} .',
                    '{type} polyp in the {location} , {size} , about {mm} mm .')
LEDGER_REASONS = ('not-sampled', 'low-quality', 'no-polyp', 'unaligned')
MIN_RENDER_CHANNELS = 7

SEQUENCES_SCHEMA = 'ldp.frame_sequences/1'
SPANS_SCHEMA = 'ldp.sentence_spans/1'
PAIRS_SCHEMA = 'ldp.image_text_pairs/1'
LEDGER_SCHEMA = 'ldp.rejection_ledger/1'


@dataclass
class DataprepOptions:
    target_frames: int = 12
    min_rate: float = 0.1
    max_rate: float = 2.0
    min_quality: float = 0.5
    require_polyp: bool = True
    split_ratio: float = 0.8
    patient_level: bool = False
    corpus_size: int = 64
    frame_rate: float = 1.0

    def __post_init__(self):
        if self.target_frames < 1:
            raise ConfigError('dataprep.target_frames must be at least 1')
        if not 0 < self.min_rate <= self.max_rate:
            raise ConfigError('dataprep rates must satisfy 0 < min_rate <= max_rate')
        if not 0.0 <= self.min_quality <= 1.0:
            raise ConfigError('dataprep.min_quality must be in [0, 1]')
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError('dataprep.split_ratio must be in (0, 1)')
        if self.corpus_size < 1 or self.frame_rate <= 0:
            raise ConfigError('dataprep.corpus_size and dataprep.frame_rate must be positive')


def render_patches(render_key, noise_seed, grid=(8, 8), patch_dim=12):
    """
    Draw the patch grid of a synthetic frame.
    :param render_key: (type index, location index, size index, sentence variant)
    :param noise_seed: Seed of the per-frame noise
    :param grid: (rows, cols)
    :param patch_dim: Channels per patch, at least 7
    :return: array [rows x cols x patch_dim]
    """
    if patch_dim < MIN_RENDER_CHANNELS:
        raise ConfigError(f'synthetic frames need patch_dim >= {MIN_RENDER_CHANNELS}, got {patch_dim}')
    type_index, location_index, size_index, variant = (int(v) for v in render_key)
    rows, cols = grid
    rng = np.random.default_rng(noise_seed)
    patches = rng.uniform(-0.1, 0.1, size=(rows, cols, patch_dim))
    patches[:, :, type_index] += 1.0
    centre_row = (rows - 1) / 2.0
    centre_col = location_index * (cols - 1) / (len(LOCATIONS) - 1)
    row_index, col_index = np.meshgrid(np.arange(rows), np.arange(cols), indexing='ij')
    dist2 = (row_index - centre_row) ** 2 + (col_index - centre_col) ** 2
    radius = SIZE_RADII[size_index]
    patches[:, :, 4] += np.exp(-dist2 / (2.0 * radius ** 2))
    patches[:, :, 5] += (dist2 <= radius ** 2).astype(np.float64)
    patches[:, :, 6] += 1.0 if variant == 0 else -1.0
    return patches


def patch_statistics(patches):
    """ Per-channel mean over the grid """
    return np.asarray(patches).mean(axis=(0, 1))


@dataclass
class Frame:
    timestamp: float
    quality: float
    polyp_present: bool
    render_key: tuple = None
    noise_seed: int = 0
    patches: np.ndarray = None

    def grid(self, grid=(8, 8), patch_dim=12):
        if self.patches is not None:
            return np.asarray(self.patches, dtype=np.float64)
        if self.render_key is None:
            raise DataError(f'frame at {self.timestamp} has neither patches nor a render key')
        return render_patches(self.render_key, self.noise_seed, grid, patch_dim)


@dataclass
class SentenceSpan:
    start: float
    end: float
    text: str

    @property
    def midpoint(self):
        return (self.start + self.end) / 2.0


@dataclass
class FrameSequence:
    video_id: str
    duration: float
    frames: list
    sentences: list = field(default_factory=list)
    stratum: str = None
    patient_id: str = None

    def validate(self):
        if self.duration <= 0:
            raise ValidationError(f'video {self.video_id} has non-positive duration {self.duration}')
        previous = None
        for frame in self.frames:
            if not 0.0 <= frame.timestamp <= self.duration:
                raise ValidationError(f'video {self.video_id}: frame time {frame.timestamp} outside [0, {self.duration}]')
            if previous is not None and frame.timestamp <= previous:
                raise ValidationError(f'video {self.video_id}: frame times are not strictly increasing')
            previous = frame.timestamp
        for span in self.sentences:
            if not 0.0 <= span.start <= span.end <= self.duration:
                raise ValidationError(f'video {self.video_id}: sentence span [{span.start}, {span.end}] '
                                      f'outside [0, {self.duration}]')
        if self.stratum is not None and self.stratum not in POLYP_TYPES:
            raise ValidationError(f'video {self.video_id}: unknown stratum {self.stratum!r}')


@dataclass
class ImageTextPair:
    pair_id: str
    patches: np.ndarray
    report: str
    stratum: str
    video_id: str
    timestamp: float
    patient_id: str = None
    render_key: tuple = None
    noise_seed: int = 0

    def __post_init__(self):
        if not self.report.strip():
            raise DataError(f'pair {self.pair_id} has an empty report')
        if self.stratum not in POLYP_TYPES:
            raise DataError(f'pair {self.pair_id} has unknown stratum {self.stratum!r}')

    @property
    def tokens(self):
        return tokenize_text(self.report)


def sample_keyframes(seq, target_frames, min_rate=0.1, max_rate=2.0):
    """
    Pick frames nearest to a uniform time grid whose density adapts to the video length.
    rate = clamp(target_frames / duration, min_rate, max_rate); grid t_k = (k + 0.5) / rate.
    :param seq: FrameSequence
    :param target_frames: Wanted number of keyframes, >= 1
    :param min_rate: Lowest sampling rate in frames per second
    :param max_rate: Highest sampling rate in frames per second
    :return: Selected frames in time order, without duplicates
    """
    if target_frames < 1:
        raise ConfigError('target_frames must be at least 1')
    if not seq.frames:
        raise DataError(f'video {seq.video_id} has no frames')
    if seq.duration <= 0:
        raise DataError(f'video {seq.video_id} has non-positive duration')
    rate = min(max(target_frames / seq.duration, min_rate), max_rate)
    n_points = max(1, floor(seq.duration * rate + 1e-9))
    times = np.array([frame.timestamp for frame in seq.frames])
    selected = []
    for k in range(n_points):
        point = min((k + 0.5) / rate, seq.duration)
        nearest = int(np.argmin(np.abs(times - point)))
        if nearest not in selected:
            selected.append(nearest)
    return [seq.frames[i] for i in sorted(selected)]


def quality_filter(frames, min_quality, require_polyp):
    """
    Keep clear frames that show a polyp.
    :param frames: Frames to screen
    :param min_quality: Inclusive quality threshold in [0, 1]
    :param require_polyp: Reject frames without a polyp
    :return: (retained frames, list of (frame, reason) rejections)
    """
    if not 0.0 <= min_quality <= 1.0:
        raise ConfigError(f'min_quality must be in [0, 1], got {min_quality}')
    retained, rejected = [], []
    for frame in frames:
        if frame.quality < min_quality:
            rejected.append((frame, 'low-quality'))
        elif require_polyp and not frame.polyp_present:
            rejected.append((frame, 'no-polyp'))
        else:
            retained.append(frame)
    return retained, rejected


def align_frames_to_sentences(seq, frames, file_logger, grid=(8, 8), patch_dim=12):
    """
    Pair each frame with the sentence whose span contains its time.
    Several containing spans: nearest midpoint wins, then the earlier start.
    :param seq: FrameSequence owning the frames and sentence spans
    :param frames: Frames to align
    :param file_logger: Logger
    :param grid: Patch grid used when rendering synthetic frames
    :param patch_dim: Channels per patch
    :return: (list of ImageTextPair, list of unaligned frames)
    """
    for span in seq.sentences:
        if not 0.0 <= span.start <= span.end <= seq.duration:
            raise ValidationError(f'video {seq.video_id}: sentence span [{span.start}, {span.end}] '
                                  f'outside [0, {seq.duration}]')
    if frames and seq.stratum is None:
        raise ValidationError(f'video {seq.video_id} has no stratum, its pairs cannot be split')
    pairs, unaligned = [], []
    for frame in frames:
        containing = [(abs(frame.timestamp - span.midpoint), span.start, i)
                      for i, span in enumerate(seq.sentences) if span.start <= frame.timestamp <= span.end]
        if not containing:
            unaligned.append(frame)
            continue
        containing.sort()
        if len(containing) > 1 and containing[0][0] == containing[1][0]:
            file_logger.info(f'Video {seq.video_id}: frame at {frame.timestamp} is equally close to two '
                              f'sentence midpoints, taking the span starting at {containing[0][1]}')
        span = seq.sentences[containing[0][2]]
        pairs.append(ImageTextPair(pair_id=f'{seq.video_id}@{frame.timestamp:.3f}',
                                   patches=frame.grid(grid, patch_dim), report=span.text, stratum=seq.stratum,
                                   video_id=seq.video_id, timestamp=frame.timestamp, patient_id=seq.patient_id,
                                   render_key=frame.render_key, noise_seed=frame.noise_seed))
    return pairs, unaligned


def process_sequence(seq, options, file_logger, grid=(8, 8), patch_dim=12):
    """
    Keyframes, filter and alignment for one video.
    :return: (pairs, ledger entries {'video_id', 'timestamp', 'reason'})
    """
    seq.validate()
    sampled = sample_keyframes(seq, options.target_frames, options.min_rate, options.max_rate)
    sampled_ids = {id(frame) for frame in sampled}
    ledger = [(frame, 'not-sampled') for frame in seq.frames if id(frame) not in sampled_ids]
    retained, rejected = quality_filter(sampled, options.min_quality, options.require_polyp)
    ledger.extend(rejected)
    pairs, unaligned = align_frames_to_sentences(seq, retained, file_logger, grid, patch_dim)
    ledger.extend((frame, 'unaligned') for frame in unaligned)
    entries = sorted(({'video_id': seq.video_id, 'timestamp': frame.timestamp, 'reason': reason}
                      for frame, reason in ledger), key=lambda entry: entry['timestamp'])
    return pairs, entries


def prepare_corpus(sequences, options, file_logger, cpu=1, grid=(8, 8), patch_dim=12):
    """
    Run process_sequence over every video, in parallel when cpu > 1; output order follows the input order.
    :return: (all pairs, all ledger entries, per-reason ledger counts)
    """
    if not sequences:
        raise DataError('no videos to prepare')
    num_videos = len(sequences)
    progress_num = max(1, ceil(num_videos / 10))
    file_logger.info(f'{num_videos} videos to be processed, starting now!')
    results = [None] * num_videos
    processed = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=cpu) as executor:
        futures = {executor.submit(process_sequence, seq, options, file_logger, grid, patch_dim): i
                   for i, seq in enumerate(sequences)}
        for f in concurrent.futures.as_completed(futures):
            results[futures[f]] = f.result()
            processed += 1
            if processed % progress_num == 0 or processed == 1:
                file_logger.info(f'\tVideo number {processed} has been processed')
    pairs = [pair for video_pairs, _ in results for pair in video_pairs]
    ledger = [entry for _, entries in results for entry in entries]
    counts = Counter(entry['reason'] for entry in ledger)
    return pairs, ledger, {reason: counts.get(reason, 0) for reason in LEDGER_REASONS}


def _split_units(units, ratio, rng, file_logger, label):
    """ units: dict stratum -> list of unit keys; returns (train keys, test keys) """
    train, test = [], []
    for stratum in sorted(units):
        members = units[stratum]
        if len(members) < 2:
            file_logger.warning(f'Stratum {stratum} has {len(members)} {label}(s), routed wholly to train')
            train.extend(members)
            continue
        order = rng.permutation(len(members))
        n_train = floor(ratio * len(members) + 1e-9)
        train.extend(members[i] for i in order[:n_train])
        test.extend(members[i] for i in order[n_train:])
    return train, test


def stratified_split(pairs, file_logger, ratio=0.8, seed=0, patient_level=False):
    """
    Per-stratum shuffled split, floor(ratio * n) to train and the rest to test.
    :param pairs: List of ImageTextPair
    :param file_logger: Logger
    :param ratio: Train fraction
    :param seed: Shuffle seed
    :param patient_level: Split patients instead of pairs, so no patient is in both parts
    :return: (train pairs, test pairs) in input order
    """
    if not pairs:
        raise DataError('cannot split an empty corpus')
    rng = np.random.default_rng(seed)
    if not patient_level:
        units = defaultdict(list)
        for i, pair in enumerate(pairs):
            units[pair.stratum].append(i)
        train, _ = _split_units(units, ratio, rng, file_logger, 'pair')
        train = set(train)
    else:
        by_patient = defaultdict(list)
        for i, pair in enumerate(pairs):
            by_patient[pair.patient_id if pair.patient_id is not None else pair.video_id].append(i)
        units = defaultdict(list)
        for patient in sorted(by_patient):
            counts = Counter(pairs[i].stratum for i in by_patient[patient])
            majority = sorted(counts, key=lambda stratum: (-counts[stratum], stratum))[0]
            units[majority].append(patient)
        train_patients, _ = _split_units(units, ratio, rng, file_logger, 'patient')
        train = {i for patient in train_patients for i in by_patient[patient]}
    return ([pair for i, pair in enumerate(pairs) if i in train],
            [pair for i, pair in enumerate(pairs) if i not in train])


def fraction_subset(pairs, fraction, seed=0):
    """ Stratified subset holding floor(fraction * n) of every stratum (at least one member each) """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f'fraction must be in (0, 1], got {fraction}')
    rng = np.random.default_rng(seed)
    by_stratum = defaultdict(list)
    for i, pair in enumerate(pairs):
        by_stratum[pair.stratum].append(i)
    keep = set()
    for stratum in sorted(by_stratum):
        members = by_stratum[stratum]
        n_keep = max(1, floor(fraction * len(members) + 1e-9))
        keep.update(members[i] for i in rng.permutation(len(members))[:n_keep])
    return [pair for i, pair in enumerate(pairs) if i in keep]


def report_sentences(type_name, location, size):
    return [template.format(type=type_name, location=location, size=size, mm=SIZE_MM[size])
            for template in REPORT_TEMPLATES]


def synth_corpus(size, seed=0, frame_rate=1.0):
    """
    Seeded synthetic endoscopy videos with two report sentences each.
    Spans: [0.05d, 0.5d] for the first sentence and [0.5d, 0.95d] for the second.
    :param size: Number of videos, >= 1
    :param seed: Generator seed
    :param frame_rate: Frames per second of the synthetic recording
    :return: List of FrameSequence
    """
    if size < 1:
        raise ConfigError('synthetic corpus size must be at least 1')
    rng = np.random.default_rng(seed)
    sequences = []
    for v in range(size):
        type_index = int(rng.integers(len(POLYP_TYPES)))
        location_index = int(rng.integers(len(LOCATIONS)))
        size_index = int(rng.integers(len(SIZES)))
        duration = float(np.round(rng.uniform(20.0, 180.0), 3))
        n_frames = int(floor(duration * frame_rate))
        frames = []
        for i in range(n_frames):
            timestamp = (i + 0.5) / frame_rate
            variant = 0 if timestamp <= duration / 2.0 else 1
            frames.append(Frame(timestamp=timestamp,
                                quality=float(np.round(rng.uniform(0.3, 1.0), 6)),
                                polyp_present=bool(rng.random() < 0.95),
                                render_key=(type_index, location_index, size_index, variant),
                                noise_seed=int(rng.integers(2 ** 31))))
        first, second = report_sentences(POLYP_TYPES[type_index], LOCATIONS[location_index], SIZES[size_index])
        sentences = [SentenceSpan(0.05 * duration, 0.5 * duration, first),
                     SentenceSpan(0.5 * duration, 0.95 * duration, second)]
        sequences.append(FrameSequence(video_id=f'video{v:04d}', duration=duration, frames=frames,
                                       sentences=sentences, stratum=POLYP_TYPES[type_index],
                                       patient_id=f'patient{v // 2:04d}'))
    return sequences


def synth_pairs(n, seed=0, grid=(8, 8), patch_dim=12):
    """ n image-text pairs drawn directly from the generator, for training experiments """
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        key = (int(rng.integers(len(POLYP_TYPES))), int(rng.integers(len(LOCATIONS))),
               int(rng.integers(len(SIZES))), int(rng.integers(len(REPORT_TEMPLATES))))
        noise_seed = int(rng.integers(2 ** 31))
        text = report_sentences(POLYP_TYPES[key[0]], LOCATIONS[key[1]], SIZES[key[2]])[key[3]]
        pairs.append(ImageTextPair(pair_id=f'synth{i:05d}', patches=render_patches(key, noise_seed, grid, patch_dim),
                                   report=text, stratum=POLYP_TYPES[key[0]], video_id=f'synth{i:05d}',
                                   timestamp=0.0, patient_id=f'synth{i:05d}', render_key=key, noise_seed=noise_seed))
    return pairs


def _find_phrase(text, phrases):
    for phrase in phrases:
        if re.search(rf'\b{re.escape(phrase)}\b', text):
            return phrase
    return None


def parse_attributes(text):
    """ Clinical attributes mentioned in a report: {'type', 'location', 'size'} subset """
    found = {}
    for category, values in (('type', POLYP_TYPES), ('location', LOCATIONS), ('size', SIZES)):
        value = _find_phrase(text.lower(), values)
        if value is not None:
            found[category] = value
    return found


def hallucinate_report(text, rng):
    """
    Replace one clinical attribute of a report with a different value of the same kind.
    :param text: Report text
    :param rng: numpy Generator choosing the attribute and replacement
    :return: Altered report, or None when no attribute is mentioned
    """
    text = text.lower()
    found = parse_attributes(text)
    if not found:
        return None
    categories = sorted(found)
    category = categories[int(rng.integers(len(categories)))]
    values = {'type': POLYP_TYPES, 'location': LOCATIONS, 'size': SIZES}[category]
    old = found[category]
    choices = [value for value in values if value != old]
    new = choices[int(rng.integers(len(choices)))]
    altered = re.sub(rf'\b{re.escape(old)}\b', new, text, count=1)
    if category == 'size':
        altered = altered.replace(f'{SIZE_MM[old]} mm', f'{SIZE_MM[new]} mm')
    return altered


def _frame_record(frame):
    record = {'t': frame.timestamp, 'quality': frame.quality, 'polyp': frame.polyp_present}
    if frame.patches is not None:
        record['patches'] = np.asarray(frame.patches).tolist()
    else:
        record['render_key'] = list(frame.render_key)
        record['noise_seed'] = frame.noise_seed
    return record


def write_sequences(sequences, frames_path, spans_path):
    """ Frame-sequence manifest and sentence-span file, one JSON record per line after the schema line """
    with open(frames_path, 'w') as frames_file, open(spans_path, 'w') as spans_file:
        frames_file.write(json.dumps({'schema': SEQUENCES_SCHEMA}) + '\n')
        spans_file.write(json.dumps({'schema': SPANS_SCHEMA}) + '\n')
        for seq in sequences:
            frames_file.write(json.dumps({'video_id': seq.video_id, 'patient_id': seq.patient_id,
                                          'duration': seq.duration, 'stratum': seq.stratum,
                                          'frames': [_frame_record(frame) for frame in seq.frames]},
                                         sort_keys=True) + '\n')
            for span in seq.sentences:
                spans_file.write(json.dumps({'video_id': seq.video_id, 'start': span.start, 'end': span.end,
                                             'text': span.text}, sort_keys=True) + '\n')


def _read_records(path, schema):
    """ Yield (line number, record) after checking the schema line """
    with open(path, 'r') as in_file:
        first = in_file.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as error:
            raise ValidationError(f'{path}: missing schema line', 1) from error
        if header.get('schema') != schema:
            raise ValidationError(f'{path}: expected schema {schema}, found {header.get("schema")}', 1)
        for line_number, line in enumerate(in_file, start=2):
            if not line.strip():
                continue
            try:
                yield line_number, json.loads(line)
            except json.JSONDecodeError as error:
                raise ValidationError(f'{path}: malformed record', line_number) from error


def read_sequences(frames_path, spans_path):
    """
    Read frame-sequence and sentence-span files.
    :return: List of validated FrameSequence
    """
    spans = defaultdict(list)
    for line_number, record in _read_records(spans_path, SPANS_SCHEMA):
        try:
            spans[record['video_id']].append(SentenceSpan(float(record['start']), float(record['end']),
                                                          str(record['text'])))
        except (KeyError, TypeError, ValueError) as error:
            raise ValidationError(f'{spans_path}: bad sentence span ({error})', line_number) from error
    sequences = []
    for line_number, record in _read_records(frames_path, SEQUENCES_SCHEMA):
        try:
            frames = [Frame(timestamp=float(item['t']), quality=float(item['quality']),
                            polyp_present=bool(item['polyp']),
                            render_key=tuple(item['render_key']) if 'render_key' in item else None,
                            noise_seed=int(item.get('noise_seed', 0)),
                            patches=np.array(item['patches'], dtype=np.float64) if 'patches' in item else None)
                      for item in record['frames']]
            seq = FrameSequence(video_id=str(record['video_id']), duration=float(record['duration']), frames=frames,
                                sentences=spans.get(record['video_id'], []), stratum=record.get('stratum'),
                                patient_id=record.get('patient_id'))
        except (KeyError, TypeError, ValueError) as error:
            raise ValidationError(f'{frames_path}: bad frame sequence ({error})', line_number) from error
        if seq.stratum is None:
            raise ValidationError(f'{frames_path}: video {seq.video_id} has no stratum', line_number)
        try:
            seq.validate()
        except ValidationError as error:
            raise ValidationError(f'{frames_path}: {error}', line_number) from error
        sequences.append(seq)
    if not sequences:
        raise DataError(f'{frames_path} holds no frame sequences')
    return sequences


def write_pairs(pairs, path):
    with open(path, 'w') as out_file:
        out_file.write(json.dumps({'schema': PAIRS_SCHEMA}) + '\n')
        for pair in pairs:
            record = {'pair_id': pair.pair_id, 'video_id': pair.video_id, 'patient_id': pair.patient_id,
                      'timestamp': pair.timestamp, 'stratum': pair.stratum, 'report': pair.report}
            if pair.render_key is not None:
                record['render_key'] = list(pair.render_key)
                record['noise_seed'] = pair.noise_seed
            else:
                record['patches'] = np.asarray(pair.patches).tolist()
            out_file.write(json.dumps(record, sort_keys=True) + '\n')


def read_pairs(path, grid=(8, 8), patch_dim=12):
    pairs = []
    for line_number, record in _read_records(path, PAIRS_SCHEMA):
        try:
            if 'render_key' in record:
                key = tuple(record['render_key'])
                patches = render_patches(key, record['noise_seed'], grid, patch_dim)
            else:
                key = None
                patches = np.array(record['patches'], dtype=np.float64)
            pairs.append(ImageTextPair(pair_id=record['pair_id'], patches=patches, report=record['report'],
                                       stratum=record['stratum'], video_id=record['video_id'],
                                       timestamp=float(record['timestamp']), patient_id=record.get('patient_id'),
                                       render_key=key, noise_seed=int(record.get('noise_seed', 0))))
        except (KeyError, TypeError, ValueError, DataError) as error:
            raise ValidationError(f'{path}: bad image-text pair ({error})', line_number) from error
    if not pairs:
        raise DataError(f'{path} holds no image-text pairs')
    return pairs


def write_ledger(entries, path):
    with open(path, 'w') as out_file:
        out_file.write(json.dumps({'schema': LEDGER_SCHEMA}) + '\n')
        for entry in entries:
            out_file.write(json.dumps(entry, sort_keys=True) + '\n')
